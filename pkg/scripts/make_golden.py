"""Regenerate the golden files under tests/golden.

Only rerun this after an intentional change to numerics or report format, and
review the diff before committing.
"""
import json
import tempfile
from pathlib import Path

from fedravan import analysis as an
from fedravan import cli
from fedravan import flcore as fl
from fedravan.experiment import build_state, with_overrides
from fedravan.verify import tiny_config

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = ROOT / "tests" / "golden"


def tiny_report() -> str:
    cfg = with_overrides(tiny_config("ravan"), analysis={"track_spectra": True})
    records, _ = fl.run_rounds(build_state(cfg, 0), 3)
    return an.format_report(records)


def example_summary() -> dict:
    with tempfile.TemporaryDirectory() as tmp:
        code = cli.main(["run", "--config", str(ROOT / "configs" / "example.yaml"), "--out", tmp])
        assert code == 0
        return json.loads((Path(tmp) / "ravan" / "0" / "summary.json").read_text())


if __name__ == "__main__":
    GOLDEN.mkdir(parents=True, exist_ok=True)
    (GOLDEN / "tiny_ravan_3rounds.csv").write_text(tiny_report())
    (GOLDEN / "example_summary.json").write_text(json.dumps(example_summary(), indent=2) + "\n")
    print("golden files written to", GOLDEN)

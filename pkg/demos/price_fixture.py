"""Run the bundled electricity-price study end to end through the CLI.

The fixture holds 50 state-like units of monthly prices from 1990 to 1999.
Nine units have prices cut by 7% from 1998-01 onwards. The script fits
all four models, writes the report files to a temporary directory and
restates the ATT as a percentage of the treated units' 1997 mean price.

    python3 demos/price_fixture.py
"""

from __future__ import annotations

import json
import tempfile
from pathlib import Path

from cfpanel.cli import main as cli
from cfpanel.evaluate import relative_att
from cfpanel.fixtures import REFERENCE_ATT, TREATED_PRE_MEAN, fixture_paths


def main() -> None:
    paths = fixture_paths()
    info = json.loads(paths.info.read_text())
    print(f"treated units: {', '.join(info['treated_units'])}")
    print(f"injected ATT {info['injected_att']:.3f} cents/kWh\n")

    with tempfile.TemporaryDirectory() as tmp:
        cli(["study", "--config", str(paths.study), "--out", tmp])
        report = json.loads((Path(tmp) / "report.json").read_text())
        print("\nfiles:", ", ".join(sorted(p.name for p in Path(tmp).iterdir())))

    print(f"\n{'model':<8}{'ATT':>9}{'relative':>10}")
    for m in report["models"]:
        print(f"{m['model']:<8}{m['att']:>9.3f}{m['relative_att']:>10.2%}")

    rel = relative_att(REFERENCE_ATT, TREATED_PRE_MEAN)
    print(f"\nreference: {REFERENCE_ATT} / {TREATED_PRE_MEAN} = {rel:.2%}")


if __name__ == "__main__":
    main()

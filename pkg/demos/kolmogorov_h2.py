"""Kolmogorov operator: the energy inequalities hold, the log inequality does not.

Diffusion acts along the first axis only and transport x1 d/dx2 moves mass
along the second.  Functions varying in the second direction are invisible
to the energy but not to the transport term.

    python3 demos/kolmogorov_h2.py [out_dir]
"""

import json
import sys
import tempfile
from pathlib import Path

from moserlab import cli

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp()) / "S3"
status = cli.run_scenario(cli.resolve_config(cli.default_config("S3")), out)
summary = json.loads((out / "summary.json").read_text())
reports = [json.loads(line) for line in open(out / "reports.jsonl")]
print(f"S3 exit status {status}; unverified: {summary['unverified']}")

h1a = [r for r in reports if r["check"] == "H1a"]
print(f"\nH1a: {sum(r['pass'] for r in h1a)} of {len(h1a)} probe checks pass")

print("\nH2 margins by probe (negative means the inequality is violated)")
for r in reports:
    if r["check"] == "H2":
        m = float(r["margin"])
        print(f"  {r.get('scope') or 'solution':28s} {m:+.3e} {r.get('status', '')}")

mve = [r for r in reports if r["check"].startswith("mve")]
print("\nmean value estimates still pass: " + ", ".join(f"{r['check']} p={r['p']}" for r in mve if r["pass"]))
har = next(r for r in reports if r["check"] == "harnack")
print(f"harnack: {har['status']}")

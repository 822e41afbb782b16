"""Heat flow on a 16x16 lattice: certify the constants, run the estimates, compare with the Harnack ratio.

    python3 demos/heat_harnack.py [out_dir]
"""

import json
import math
import sys
import tempfile
from pathlib import Path

from moserlab import cli

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp()) / "S1"
cfg = cli.resolve_config(cli.default_config("S1"))
status = cli.run_scenario(cfg, out)
print(f"S1 finished with exit status {status}, bundle in {out}")

reports = [json.loads(line) for line in open(out / "reports.jsonl")]
ledger = json.loads((out / "ledger.json").read_text())

# the certified inputs of the chain, then what they add up to
print("\ncertified inputs")
for name in ("a", "a_bar", "C1", "C2", "C3", "C_SI", "C_SI0", "C_wPI"):
    e = ledger[name]
    print(f"  {name:8s} {e['value']:.6g}  ({e['formula']})")

print("\nderived")
for name in ("k1", "log_C_prime", "A0[early]", "A1[early]", "A2[early]", "log_A3[early]", "loglog_C_PHI"):
    e = ledger[name]
    print(f"  {name:14s} {e['value']:.6g}  = {e['formula']}")

har = next(r for r in reports if r["check"] == "harnack")
ratio = har["inputs"]["ratio"]
print(f"\nsup over the early cylinder / inf over the late one: {ratio:.4f}")
print(f"log log C_PHI = {ledger['loglog_C_PHI']['value']:.1f}, so C_PHI = exp(exp(...)) "
      f"and the observed log log ratio is {math.log(math.log(ratio)):.3f}")

print("\nfive tightest estimates (adaptedness probes left out)")
tight = sorted((r for r in reports if r["asserted"] and r["margin"] not in (None, "inf")
                and r.get("scope") != "adaptedness"),
               key=lambda r: float(r["margin"]))[:5]
for r in tight:
    print(f"  {r['check']:18s} p={r['p']!s:6s} margin {float(r['margin']):.3e} budget {r['budget']:.1e}")

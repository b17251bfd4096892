"""Small-ball diagnostic: log P([int sigma dB^H]_beta <= eps) against eps^(-1/(H - beta)).

Prints the raw points and the fitted slope. No claim is attached to the slope.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from fracom.models import ModelSpec, constant_noise, zero_force
from fracom.montecarlo import EnsembleSpec, small_ball_diagnostic


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--H", type=float, default=0.5)
    ap.add_argument("--beta", type=float, default=0.2)
    ap.add_argument("--sigma", type=float, default=1.0)
    ap.add_argument("--eps", type=float, nargs="+", default=[2.0, 1.6, 1.3, 1.1])
    ap.add_argument("--n-steps", type=int, default=512)
    ap.add_argument("--n-paths", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/smallball")
    args = ap.parse_args()

    spec = EnsembleSpec(ModelSpec(zero_force(), constant_noise(args.sigma)), args.H, 0.0, 0.0,
                        args.n_steps, args.n_paths, args.seed)
    res = small_ball_diagnostic(spec, args.beta, args.eps)
    for eps, x, hits, trials in res.points:
        print(f"eps={eps:5.2f}  x={x:9.4f}  P={hits / trials:.4e}  ({hits}/{trials})")
    if res.dropped:
        print(f"dropped (too few hits): {list(res.dropped)}")
    print(f"slope = {res.slope_fit:.4f}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(res.to_record(), indent=2))


if __name__ == "__main__":
    main()

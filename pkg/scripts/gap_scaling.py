"""Gap between the accumulated-batch update and its CMA form, across step sizes.

Prints the max-norm gap for a ladder of halving step sizes and the ratio of
consecutive gaps (about 1/2 when the gap is first order in the step size).
"""
import argparse

from stochbatch.data import make_blobs
from stochbatch.models import build_mlp
from stochbatch.oracle import gauss_seidel_gap


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--hidden", type=int, nargs="*", default=[], help="hidden widths; none = logistic regression")
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--lrs", type=float, nargs="+", default=[0.04, 0.02, 0.01, 0.005, 0.0025])
    args = ap.parse_args()
    ds = make_blobs(args.n, 2, 2, 3.0, 0)
    model = build_mlp(2, args.hidden, 2)
    store = model.init_params(seed=0)
    prev = None
    for lr in args.lrs:
        gap = gauss_seidel_gap(model, store, ds, args.batch, lr, args.seed).max_gap
        ratio = f"{gap / prev:.4f}" if prev else ""
        print(f"lr={lr:<8g} gap={gap:.4e} {ratio}")
        prev = gap


if __name__ == "__main__":
    main()

"""Tabulate the four learning-rate schedules over a training run."""
import argparse

from stochbatch.schedules import LrSchedule


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--every", type=int, default=5)
    args = ap.parse_args()
    schedules = {
        "constant": LrSchedule("constant"),
        "exponential": LrSchedule("exponential"),
        "staircase": LrSchedule("staircase"),
        "sigmoid": LrSchedule("sigmoid"),
    }
    print("epoch " + " ".join(f"{k:>12s}" for k in schedules))
    for e in range(0, args.epochs + 1, args.every):
        print(f"{e:5d} " + " ".join(f"{s(e, args.epochs):12.6f}" for s in schedules.values()))


if __name__ == "__main__":
    main()

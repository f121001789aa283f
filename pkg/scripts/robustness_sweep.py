"""CIM vs MSE on corrupted synthetic subspaces over several seeds."""
import argparse

from rscn.experiments import cim_beats_mse, robustness_trial


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default="synth_corrupted")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    args = p.parse_args()
    wins = 0
    print("seed  cim_acc  mse_acc  cim_offblock  mse_offblock  cim_wins")
    for seed in range(args.seeds):
        t = robustness_trial(seed, args.config, args.overrides)
        won = cim_beats_mse(t)
        wins += won
        print(f"{seed:4d}  {t['cim'].accuracy:7.4f}  {t['mse'].accuracy:7.4f}  "
              f"{t['cim'].off_block:12.4f}  {t['mse'].off_block:12.4f}  {won}")
    print(f"CIM better in {wins}/{args.seeds} trials")


if __name__ == "__main__":
    main()

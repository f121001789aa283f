"""Print the pseudo-label refinement epochs each dataset config produces.

The config's schedule (T_max, T0, warm-up) is kept; the data is swapped for a
small shallow synthetic problem so the full epoch budget runs in seconds.
"""
import argparse

from rscn.experiments import DATASET_CONFIGS, schedule_refinements


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("names", nargs="*", default=list(DATASET_CONFIGS))
    args = p.parse_args()
    for name in args.names:
        cfg, epochs = schedule_refinements(name)
        s = cfg.schedule
        expected = list(range(s.warmup + s.t0, s.t_max + 1, s.t0))
        print(f"{name}: T_max={s.t_max} T0={s.t0} W={s.warmup} refinements={len(epochs)} "
              f"first={epochs[:3]} last={epochs[-1:]} match={epochs == expected}")


if __name__ == "__main__":
    main()

"""Write a labelled scene-graph dataset and summarise its predicate counts."""

import argparse

from sgfusion.harness import generate_dataset, load_config


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("config")
    p.add_argument("out")
    p.add_argument("-n", type=int, default=100)
    args = p.parse_args(argv)
    manifest = generate_dataset(load_config(args.config), args.n, args.out)
    print(f"{manifest['total']} records, {manifest['attacked']} attacked -> {args.out}")
    for graph, counts in manifest["predicate_counts"].items():
        if counts:
            print(f"  {graph:<24} " + ", ".join(f"{k}={v}" for k, v in counts.items()))


if __name__ == "__main__":
    main()

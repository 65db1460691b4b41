#!/usr/bin/env python3
"""Write the block-structured synthetic dataset as raw CLI inputs
(interactions.tsv + visual/textual MMF1 feature files)."""

import argparse

from mentor.synthetic import write_block_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir")
    ap.add_argument("--n-users", type=int, default=20)
    ap.add_argument("--n-items", type=int, default=30)
    ap.add_argument("--per-user", type=int, default=12)
    ap.add_argument("--noise", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    path = write_block_dataset(args.out_dir, n_users=args.n_users,
                               n_items=args.n_items, per_user=args.per_user,
                               noise=args.noise, seed=args.seed)
    print(f"wrote synthetic dataset to {path}")


if __name__ == "__main__":
    main()

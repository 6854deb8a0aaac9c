"""Fusion of textual and non-textual concept embeddings.

Checks the (1 - alpha)^2 shrinkage of expected cross similarities, then runs
the reasonableness study on the bundled fixture with the identity refiner
(nothing may change) and with a small random attention refiner.

Run: python3 demos/fusion_study.py
"""

from momentprior.feasibility import (
    ToyAttentionRefiner,
    expectation_scaling_check,
    fixture_table,
    fixture_triplets,
    identity_refiner,
    run_refine_study,
)


def main():
    print("alpha  empirical ratio  (1-alpha)^2")
    for a in (0.1, 0.5, 0.9):
        r = expectation_scaling_check(128, a, 20_000, seed=0)
        print(f"{a:5.2f}  {r['empirical_ratio']:15.4f}  {(1 - a) ** 2:11.4f}")

    table, triplets = fixture_table(), fixture_triplets()
    for name, refiner in (("identity", identity_refiner), ("toy attention", ToyAttentionRefiner.random(table.dim, seed=0, scale=1.0))):
        print(f"\nrefiner: {name}")
        for r in run_refine_study(table, triplets, refiner, (0.0, 0.5), (0.0, 0.3), seed=0):
            print(
                f"  alpha={r.alpha:.2f} p={r.p:.1f}: unreasonable {r.n_unreasonable_before:3d}, "
                f"improved {r.improved_proportion:.2f}, deteriorated {r.deteriorated_proportion:.2f}"
            )


if __name__ == "__main__":
    main()

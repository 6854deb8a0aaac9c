"""Small version of the pseudo-event regulation ablation.

Trains the toy predictor with L_mnt alone, with L_evt added, and with L_pos
added as well, then prints top-1 mean IoU and the boundary crossing rate.
The full-size run is ``momentprior synth run --out synth.json``.

Run: python3 demos/regulation_ablation.py
"""

from dataclasses import replace

from momentprior.synthlab import AblationConfig, TrainConfig, run_ablation, summarize


def main():
    cfg = AblationConfig(n_videos=30, seeds=(0, 1, 2), train=replace(TrainConfig(), epochs=150))
    summary = summarize(run_ablation(cfg, threads=3))
    print(f"{'variant':14s} {'mean IoU':>9s} {'crossing':>9s}")
    for name, row in summary.items():
        print(f"{name:14s} {row['mean_iou']:9.3f} {row['boundary_crossing_rate']:9.3f}")


if __name__ == "__main__":
    main()

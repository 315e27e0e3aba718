"""Train lambda=100 and lambda=0 captioners on the toy shapes data and compare.

    python scripts/toy_ablation.py --out runs/toy_ablation
"""

import argparse
import json
import logging
import time
from pathlib import Path

from gradcap.pipeline import RunConfig, attention_mass_in_masks, evaluate, saliency_hit_rate, train
from gradcap.toy import ToyConfig, generate_toy_dataset, toy_mapping


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/toy_ablation")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--train", type=int, default=200)
    ap.add_argument("--test", type=int, default=50)
    ap.add_argument("--colour-words", action=argparse.BooleanOptionalAction, default=False,
                    help="put colour adjectives in the captions")
    ap.add_argument("--order", default="category")
    ap.add_argument("--lambdas", type=float, nargs="+", default=[100.0, 0.0])
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    toy = ToyConfig(num_images=args.train + args.test, order=args.order,
                    colour_words=args.colour_words)
    samples = generate_toy_dataset(toy, seed=args.seed)
    train_s, test_s = samples[: args.train], samples[args.train :]
    mapping = toy_mapping(toy)
    out = Path(args.out)

    rows = {}
    encoder_ckpt = ""
    for lam in args.lambdas:
        t0 = time.time()
        cfg = RunConfig.toy(lam=lam, epochs=args.epochs, seed=args.seed, encoder_init=encoder_ckpt,
                            output_dir=str(out / f"lam{lam:g}"))
        res = train(cfg, train_s, mapping, resume=False)
        encoder_ckpt = encoder_ckpt or str(res.output_dir / "encoder.ckpt")
        report = evaluate(res.model, test_s)
        rows[lam] = {
            "bleu4": report.bleu[3], "cider": report.cider, "rouge_l": report.rouge_l,
            "attention_mass_test": attention_mass_in_masks(res.model, test_s),
            "saliency_hit_rate_train": saliency_hit_rate(res.targets, train_s),
            "first_caption_loss": res.caption_trace[0]["caption_loss"],
            "last_caption_loss": res.caption_trace[-1]["caption_loss"],
            "seconds": time.time() - t0,
        }
        print(lam, json.dumps(rows[lam]))
    (out / "summary.json").write_text(json.dumps(rows, indent=1))


if __name__ == "__main__":
    main()

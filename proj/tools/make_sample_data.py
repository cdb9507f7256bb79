#!/usr/bin/env python3
"""Writes two small NetFlow-style CSVs plus specs and a run config."""

import argparse
import csv
import json
import random
from pathlib import Path

COLUMNS = ["IPV4_SRC_ADDR", "L4_SRC_PORT", "IPV4_DST_ADDR", "L4_DST_PORT", "PROTOCOL",
           "L7_PROTO", "IN_BYTES", "IN_PKTS", "OUT_BYTES", "OUT_PKTS", "TCP_FLAGS",
           "ICMP_TYPE", "ICMP_IPV4_TYPE", "Label", "Attack"]


def flow(rng, attack, flavour):
    src = f"10.0.{rng.randint(0, 3)}.{rng.randint(1, 254)}"
    dst = f"192.168.1.{rng.randint(1, 20)}"
    if attack:
        proto = rng.choice([6, 17]) if flavour == "iot" else 6
        pkts = rng.randint(1, 3)
        return [src, rng.randint(1024, 65535), dst, rng.choice([80, 80, 53, 8080]), proto,
                rng.choice(["7.0", "0.0"]), pkts * rng.randint(40, 60), pkts, 0, 0,
                2 if proto == 6 else 0, 0, 0, 1, "DDoS"]
    proto = rng.choice([6, 6, 17, 1])
    pkts = rng.randint(4, 200)
    return [src, rng.randint(1024, 65535), dst, rng.choice([443, 22, 53, 123, 8080, 25]), proto,
            rng.choice(["91.0", "5.0", "7.0", "188.0"]), pkts * rng.randint(60, 1400), pkts,
            pkts * rng.randint(60, 1400), rng.randint(2, pkts), 27 if proto == 6 else 0,
            8 if proto == 1 else 0, 8 if proto == 1 else 0, 0, "Benign"]


def spec(name):
    return {"name": name,
            "categorical_fields": ["L4_DST_PORT", "PROTOCOL", "L7_PROTO", "TCP_FLAGS"],
            "numerical_fields": ["L4_SRC_PORT", "IN_BYTES", "IN_PKTS", "OUT_BYTES", "OUT_PKTS",
                                 "ICMP_TYPE", "ICMP_IPV4_TYPE"],
            "label_column": "Label", "benign_label": "0", "class_column": "Attack",
            "dropped_columns": ["IPV4_SRC_ADDR", "IPV4_DST_ADDR"]}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/sample")
    ap.add_argument("--rows", type=int, default=1500)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(args.seed)
    datasets = []
    for name, attack_share in (("nf_unsw_sample", 0.1), ("nf_bot_iot_sample", 0.6)):
        with open(out / f"{name}.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(COLUMNS)
            for _ in range(args.rows):
                w.writerow(flow(rng, rng.random() < attack_share, "iot" if "iot" in name else "lan"))
        (out / f"{name}.spec.json").write_text(json.dumps(spec(name), indent=2) + "\n")
        datasets.append({"spec": f"{name}.spec.json", "csv": f"{name}.csv"})
    run = {
        "datasets": datasets,
        "fusion_seed": 1,
        "split": {"train_fraction": 0.8, "seed": 2},
        "preprocess": {"n_top": 32, "mode": "one_hot", "window": 8},
        "model": {"block_type": "encoder", "layers": 2, "heads": 2, "d_model": 32, "d_ff": 64,
                  "input_encoding": "record_embed_dense", "head": "last_token", "mlp_hidden": 32},
        "train": {"learning_rate": 0.001, "batch_size": 64, "max_epochs": 6, "steps_per_epoch": 20,
                  "patience": 5, "repeats": 2, "seed": 3},
        "bench": {"batch_size": 32, "warmup_batches": 2, "train_batches": 10,
                  "inference_repeats": 4, "inference_batches": 10},
        "grid": {"input_encodings": ["record_embed_dense"], "block_types": ["encoder", "decoder"],
                 "layers": [1], "d_ff": [64], "heads": [2],
                 "classification_heads": ["last_token", "global_avg_pool"],
                 "learning_rates": [0.001]},
        "seed": 11,
        "output_dir": "../../runs/sample",
    }
    (out / "run.json").write_text(json.dumps(run, indent=2) + "\n")


if __name__ == "__main__":
    main()

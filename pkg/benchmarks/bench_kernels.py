"""Benchmark the compiled kernel backend against the pure-Python reference.

Micro-benchmarks time the two hot kernels directly on both backends;
--train additionally times a full 200-step toy training run per backend in
a subprocess (backend selection happens at import, via FOCALPO_PURE).

Usage:
    python benchmarks/bench_kernels.py [--calls 20000] [--train]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from focalpo._kernels import available_backends

TRAIN_SNIPPET = """
import time
from focalpo.data import SynthConfig, random_reward_model, synthesize_dataset
from focalpo.losses import LossConfig, LossVariant
from focalpo.policy import random_policy
from focalpo.trainer import TrainConfig, train
import focalpo._kernels as kernels

reference = random_policy(4, 8, seed=42)
reward = random_reward_model(4, 8, seed=142)
dataset = synthesize_dataset(
    SynthConfig(num_pairs=500, num_prompt_classes=4, vocab_size=8, seq_length=4,
                noise_rate=0.1, generator_seed=9),
    reward, reference)
config = TrainConfig(loss=LossConfig(LossVariant.FOCAL, beta=5.0, gamma=0.05),
                     learning_rate=3e-3, batch_size=128, num_epochs=50,
                     optimizer="adam", shuffle_seed=0, eval_every=10)
start = time.perf_counter()
train(config, dataset, reference.clone(), reference)
print(f"{kernels.BACKEND}: {time.perf_counter() - start:.3f}s")
"""


def bench_micro(calls: int, num_classes: int, vocab: int, length: int) -> None:
    rng = np.random.default_rng(0)
    logits = rng.standard_normal((num_classes, vocab + 1, vocab))
    tokens = rng.integers(0, vocab, size=(calls, length)).astype(np.int64)
    classes = rng.integers(0, num_classes, size=calls)
    grad = np.zeros_like(logits)

    backends = available_backends()
    results = {}
    for name, impl in backends.items():
        start = time.perf_counter()
        for i in range(calls):
            impl.seq_log_prob(logits, int(classes[i]), tokens[i])
        lp_time = time.perf_counter() - start

        start = time.perf_counter()
        for i in range(calls):
            impl.add_scaled_seq_grad(logits, int(classes[i]), tokens[i], 0.01, grad)
        grad_time = time.perf_counter() - start
        results[name] = (lp_time, grad_time)
        print(
            f"{name:9s} seq_log_prob: {1e6 * lp_time / calls:8.2f} us/call   "
            f"add_scaled_seq_grad: {1e6 * grad_time / calls:8.2f} us/call"
        )
    if len(results) == 2:
        lp_speedup = results["python"][0] / results["compiled"][0]
        grad_speedup = results["python"][1] / results["compiled"][1]
        print(f"speedup   seq_log_prob: {lp_speedup:8.1f}x        "
              f"add_scaled_seq_grad: {grad_speedup:8.1f}x")


def bench_train() -> None:
    print("\nfull 200-step training run (subprocess per backend):", flush=True)
    for pure in ("1", "0"):
        env = dict(os.environ, FOCALPO_PURE=pure)
        subprocess.run([sys.executable, "-c", TRAIN_SNIPPET], env=env, check=True)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--calls", type=int, default=20000)
    parser.add_argument("--classes", type=int, default=4)
    parser.add_argument("--vocab", type=int, default=8)
    parser.add_argument("--length", type=int, default=4)
    parser.add_argument("--train", action="store_true", help="also time a full train run")
    args = parser.parse_args()

    names = list(available_backends())
    print(f"available backends: {names}")
    bench_micro(args.calls, args.classes, args.vocab, args.length)
    if args.train:
        bench_train()


if __name__ == "__main__":
    main()

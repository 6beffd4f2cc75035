#!/usr/bin/env python3
# Copyright 2026 The DuoVoce Authors
# License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
"""Writes reference STOI scores computed with pystoi.

The signals come from a closed-form generator that tests/test_metrics.cpp
reimplements, so only the scores need to be stored.

    python3 tools/stoi_reference.py > tests/data/stoi_reference.json
"""

import json
import math
import sys

import numpy as np
from pystoi import stoi

RATE = 16000
SECONDS = 1.5
SNRS = (-10.0, 0.0, 10.0, 20.0)
PAIRS_PER_SNR = 5
NOISE_PAIRS = 10
MASK64 = (1 << 64) - 1


def lcg_uniform(seed, n):
    state = seed & MASK64
    out = np.empty(n)
    for i in range(n):
        state = (state * 6364136223846793005 + 1442695040888963407) & MASK64
        out[i] = (state >> 11) * (1.0 / (1 << 53))
    return out


def clean_signal(index):
    n = int(RATE * SECONDS)
    t = np.arange(n) / RATE
    f0 = 110.0 + 15.0 * index
    vibrato = 1.0 + 0.05 * np.sin(2.0 * math.pi * 3.0 * t)
    x = np.zeros(n)
    for k in range(5):
        x += np.sin(2.0 * math.pi * f0 * (k + 1) * t * vibrato) / (k + 1)
    env = 0.5 - 0.5 * np.cos(2.0 * math.pi * 2.0 * t)
    env[(t >= 0.6) & (t < 0.8)] = 0.0
    return 0.1 * env * x


def degraded_signal(clean, index, snr_db):
    noise = lcg_uniform(1000 + index, clean.size) - 0.5
    rms_c = math.sqrt(np.mean(clean ** 2))
    rms_n = math.sqrt(np.mean(noise ** 2))
    return clean + noise * (rms_c / rms_n) * 10.0 ** (-snr_db / 20.0)


def noise_signal(index, n):
    return 0.1 * (lcg_uniform(2000 + index, n) - 0.5)


def as_f32(x):
    return x.astype(np.float32).astype(np.float64)


def main():
    pairs = []
    for s, snr in enumerate(SNRS):
        for k in range(PAIRS_PER_SNR):
            index = s * PAIRS_PER_SNR + k
            clean = clean_signal(index)
            degraded = degraded_signal(clean, index, snr)
            # Scores are taken on float32 samples, as stored in a Waveform.
            pairs.append({"index": index, "snr_db": snr,
                          "stoi": float(stoi(as_f32(clean), as_f32(degraded),
                                             RATE, extended=False))})
    # Processed signal replaced by independent noise.
    noise_pairs = []
    for index in range(NOISE_PAIRS):
        clean = clean_signal(index)
        noise = noise_signal(index, clean.size)
        noise_pairs.append({"index": index,
                            "stoi": float(stoi(as_f32(clean), as_f32(noise),
                                               RATE, extended=False))})
    json.dump({"rate": RATE, "seconds": SECONDS, "pairs": pairs,
               "noise_pairs": noise_pairs}, sys.stdout, indent=2)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()

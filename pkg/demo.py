#!/usr/bin/env python3
"""
Quick Demo Script
Exercise the pmtune engine locally on small budgets
"""

import sys
import os
import time

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np

from pmtune import RngStream, iat_obm, recommend
from pmtune.estimators import estimate_sigma
from pmtune.kernel import LimitingKernelSpec, simulate_limiting_chain
from pmtune.models import ToyModel
from pmtune.tuning import ct_at


def print_banner():
    print("\n" + "="*80)
    print("                          PMTUNE ENGINE DEMO")
    print("         Pseudo-marginal MCMC scaling and noise tuning")
    print("="*80 + "\n")


def demo_recommendations():
    print("Demo 1: Recommended (ell, sigma) by dimension")
    print("-" * 80)

    for d in (1, 2, 4, 10, 50, 200):
        ell, sigma = recommend(d)
        print(f"  d={d:>4}: ell={ell:.3f}  sigma={sigma:.3f}")


def demo_limiting_chain():
    print("\n\nDemo 2: Limiting chain at the d=1 optimum")
    print("-" * 80)

    spec = LimitingKernelSpec(2.05, 1.16)
    trace = simulate_limiting_chain(spec, 200_000, RngStream(0))
    estimate = iat_obm(trace.f_values)
    print(f"✓ Acceptance: {trace.acceptance_rate:.4f} (reference 0.2573)")
    print(f"✓ IAT: {estimate.iat:.2f}, CT = IAT / sigma^2 = {estimate.iat / 1.16 ** 2:.2f}")


def demo_noise_levels():
    print("\n\nDemo 3: Toy model noise level against N")
    print("-" * 80)

    model = ToyModel()
    y = model.simulate(0.5, 20, RngStream(1, 0))
    theta = model.posterior(y)[0]
    for i, N in enumerate((6, 8, 10, 12)):
        sigma = estimate_sigma(model, theta, y, N, 500, RngStream(1, (1, i)))
        print(f"  N={N:>3}: sigma_hat={sigma:.3f}")


def demo_ct_comparison():
    print("\n\nDemo 4: CT at three noise levels (d=1, ell=2.05)")
    print("-" * 80)

    start = time.time()
    for sigma in (0.6, 1.16, 1.8):
        estimate = ct_at(1, 2.05, sigma, 100_000, replicates=2, seed=2)
        print(f"  sigma={sigma:.2f}: CT={estimate.ct_mean:.2f} +- {estimate.ct_sd:.2f}")
    print(f"✓ Elapsed: {time.time() - start:.1f}s")


def main():
    print_banner()
    np.set_printoptions(precision=4)

    try:
        demo_recommendations()
        demo_limiting_chain()
        demo_noise_levels()
        demo_ct_comparison()

        print("\n" + "="*80)
        print("                    ALL DEMOS COMPLETED")
        print("="*80)
        print("\nNext Steps:")
        print("  1. Run tests: pytest tests/ -v -m 'not slow'")
        print("  2. Run an experiment: pmtune tune --d 1 --preset smoke")
        print("  3. Start API: pmtune serve, then http://localhost:8000/docs")
        print("="*80 + "\n")

    except Exception as e:
        print(f"\n❌ Error: {str(e)}")
        import traceback
        traceback.print_exc()
        sys.exit(1)


if __name__ == "__main__":
    main()

"""Best achievable accuracy when only the observed window is visible.

Each simulated class is a zero-mean stationary Gaussian process, so the
optimal classifier from ``m`` observed points is the exact Gaussian
likelihood ratio between the two covariance matrices. The script builds those
matrices from the psi-weights of each ARMA recursion and scores the ratio test
on series drawn by the package's own simulator.

    python3 scripts/bayes_ceiling.py --count 200000
"""

import argparse

import numpy as np

from foreclassnet.data import SCENARIOS, ProcessSpec, build_scenario


def psi_weights(spec: ProcessSpec, n: int = 2000) -> np.ndarray:
    psi = np.zeros(n)
    psi[0] = 1.0
    for j in range(1, n):
        psi[j] = spec.ma_coeffs[j - 1] if j - 1 < len(spec.ma_coeffs) else 0.0
        for i, a in enumerate(spec.ar_coeffs, start=1):
            if j - i >= 0:
                psi[j] += a * psi[j - i]
    return psi * spec.noise_std


def stationary_covariance(spec: ProcessSpec, m: int) -> np.ndarray:
    psi = psi_weights(spec)
    gamma = np.array([psi[: len(psi) - h] @ psi[h:] for h in range(m)])
    lags = np.abs(np.subtract.outer(np.arange(m), np.arange(m)))
    return gamma[lags]


def log_likelihood(x: np.ndarray, cov: np.ndarray) -> np.ndarray:
    _, logdet = np.linalg.slogdet(cov)
    solved = np.linalg.solve(cov, x.T).T
    return -0.5 * np.einsum("ij,ij->i", x, solved) - 0.5 * logdet


def bayes_accuracy(scenario: str, m: int, count: int, seed: int) -> float:
    first, second = SCENARIOS[scenario]
    covs = [stationary_covariance(first, m), stationary_covariance(second, m)]
    ds = build_scenario(scenario, count, m=m, k=1, seed=seed)
    scores = np.stack([log_likelihood(ds.observed, c) for c in covs], axis=1)
    return float(np.mean(np.argmax(scores, axis=1) == ds.labels))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--count", type=int, default=200_000)
    parser.add_argument("--m", type=int, default=40)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    for scenario in ("ar_vs_ma", "ar_vs_ar"):
        acc = bayes_accuracy(scenario, args.m, args.count, args.seed)
        se = np.sqrt(acc * (1 - acc) / args.count)
        print(f"{scenario}: Bayes-optimal accuracy from {args.m} observed points = {acc:.4f} (+/- {1.96 * se:.4f})")


if __name__ == "__main__":
    main()

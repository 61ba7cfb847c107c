"""Independent versus informed fits of one D1 series, scored against the truth.

Usage: python demos/compare_d1.py [seed] [iterations]
"""
import sys
import time

from psdmix.mixture import ChainConfig, Stage2Hyperparams, run_chain
from psdmix.rng import RngStream
from psdmix.simulate import simulate_d1
from psdmix.summary import rmse, summarize
from psdmix.temporal import InformedConfig, relabel_trace, run_informed


def main(seed=0, iterations=3000):
    series, truth = simulate_d1(seed)
    base = Stage2Hyperparams.study_defaults(3)
    config = ChainConfig(iterations=iterations, burn_in=iterations * 2 // 5)
    root = RngStream(seed)

    fits = {}
    t0 = time.perf_counter()
    fits["independent"] = [
        relabel_trace(run_chain(series.counts[t], series.grid, base, config,
                                rng=root.child(2, 0, t)), "distance")[0]
        for t in range(series.T)]
    for theta in (0.1, 0.8, 1.3):
        cfg = InformedConfig(theta, smooth_mu=False)
        fits[f"informed theta={theta}"] = run_informed(series, base, cfg, config,
                                                       rng=root.child(2, 0))[0]
    fits["informed mu, n=25"] = run_informed(
        series, base, InformedConfig(n_carry=25, smooth_lambda=False), config,
        rng=root.child(2, 0))[0]

    print(f"D1 seed {seed}, {iterations} iterations ({time.perf_counter() - t0:.0f}s)")
    print(f"{'fit':<22}{'lambda RMSE':>12}{'mu RMSE':>10}")
    for name, traces in fits.items():
        s = summarize(traces)
        print(f"{name:<22}{rmse(s.mean['lambda'], truth.lam):>12.4f}"
              f"{rmse(s.mean['mu'], truth.mu):>10.4f}")


if __name__ == "__main__":
    args = [int(a) for a in sys.argv[1:3]]
    main(*args)

"""Smoke test for the stable_cnn extension module.

Run after installing the wheel (see README):

    python crates/python/python/smoke_test.py
"""

import math
import pathlib

import stable_cnn

ROOT = pathlib.Path(__file__).resolve().parents[3]


def check(cond, msg):
    if not cond:
        raise SystemExit(f"FAILED: {msg}")
    print(f"ok  {msg}")


# univariate law
cf = stable_cnn.stable_cf(1.5, 1.0, 1.0)
check(abs(cf.real - math.exp(-1.0)) < 1e-15 and cf.imag == 0.0, "St(1.5, 1) CF at 1 is exp(-1)")
draws = stable_cnn.sample_stable(2.0, 1.0, 50_000, seed=1)
var = sum(x * x for x in draws) / len(draws)
check(abs(var - 2.0) < 0.1, f"alpha = 2 draws have variance 2 (got {var:.3f})")

# spectral measure
m = stable_cnn.SpectralMeasure(2, 1.5, [1.0, 0.5], [[1.0, 0.0], [0.0, 1.0]])
check(len(m) == 2 and abs(m.total_mass - 1.5) < 1e-15, "measure construction")
check(m.cf([0.0, 0.0]) == 1.0, "CF at zero is 1")
check(abs(m.cf([1.0, 0.0]) - math.exp(-1.0)) < 1e-15, "CF along an atom")
sigma, tau, mu = m.project([1.0, 1.0])
check(tau == 0.0 and mu == 0.0 and abs(sigma - 1.5 ** (1 / 1.5)) < 1e-12, "projection")
samples = m.sample(20_000, seed=3)
probes = m.probes(5, seed=4)
emp = [stable_cnn.empirical_cf(samples, t) for t in probes]
sup, mean = stable_cnn.cf_distance(emp, [m.cf(t) for t in probes])
check(sup < 0.03, f"sampled measure matches its CF (sup {sup:.4f})")

# network and its limit
net = stable_cnn.Network.from_config(ROOT / "configs" / "toy.toml")
check(net.depth == 2 and net.output_dimension == 8, "toy network from config")
first = net.first_layer_measure()
check(first.bias_index == 0 and len(first) == 4, "layer-one measure has bias plus three patch atoms")
measures = net.limit(mc_samples=2000, seed=5)
target = measures[-1]
check(target.dimension == 8, f"layer-two limit: {target!r}")
reps = net.with_channels(64).replicas(5000)
outs = [r[0] for r in reps]
probes = target.probes(5, seed=6)
emp = [stable_cnn.empirical_cf(outs, t) for t in probes]
sup, _ = stable_cnn.cf_distance(emp, [target.cf(t) for t in probes])
check(sup < 0.06, f"C = 64 network close to the limit law (sup {sup:.4f})")
readout = net.readout([0.25] * 4, mc_samples=2000)
check(readout.dimension == 2, "readout measure lives on the inputs")
try:
    net.readout([0.5] * 4)
except ValueError:
    print("ok  unnormalized readout weights rejected")
else:
    raise SystemExit("FAILED: unnormalized readout weights accepted")

print("smoke test passed")

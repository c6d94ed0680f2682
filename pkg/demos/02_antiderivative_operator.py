"""Operator learning for the antiderivative with a reduced budget.

Inputs are random fields observed at 10 to 60 random points. Each input
is embedded on a learned dictionary, and a DeepONet whose branch is the
identity maps the embedding to the antiderivative on a fixed grid. The
trained model is then queried with inputs sampled on uniform grids of
decreasing size to show that accuracy does not depend on the sensor
layout until the field is no longer resolved.

The full-size run (150 training fields, 5000 epochs) is
``python -m rino run --config configs/antiderivative.json``. This script
trains for 1500 epochs and finishes in about a minute.
"""

import numpy as np

from rino import DictLearnConfig, MlpSpec, OperatorSample, PointCloudSignal, RngState, TrainConfig, Trunk, learn_dictionary_batch
from rino.datagen import GrfConfig, SubsampleConfig, sample_grf, solve_antiderivative, subsample_signal
from rino.dictionary import project_many
from rino.experiments import rediscretize
from rino.operator import evaluate_model, make_model, train_unknown_trunk

grid = np.linspace(0.0, 1.0, 100)
grf = GrfConfig(length_scale=0.2)
train_u = sample_grf(grid, grf, RngState(0, 1), n_samples=150)
test_u = sample_grf(grid, grf, RngState(0, 2), n_samples=200)
sub, rng = SubsampleConfig(10, 60), RngState(0, 3)


def signals(fields, offset):
    return [subsample_signal(PointCloudSignal(grid, u, i), sub, rng.child(offset + i)) for i, u in enumerate(fields)]


train_sig, test_sig = signals(train_u, 0), signals(test_u, 1000)
train_s = [solve_antiderivative(grid, u) for u in train_u]
test_s = [solve_antiderivative(grid, u) for u in test_u]

cfg = DictLearnConfig(lam=1e-4, tol=1e-4, max_atoms=12, lr=1.66e-4, atom_spec=MlpSpec(1, 1, (20, 20), "sine", 5.0))
dictionary, _ = learn_dictionary_batch(train_sig, cfg, rng=RngState(0, 11))
q = len(dictionary)
print(f"input dictionary: {q} functions")

# identity branch: the trunk has one output per dictionary function
trunk = Trunk("network", spec=MlpSpec(1, q, (50, 50), "sine", 5.0))
model = make_model(trunk, dictionary.fingerprint, RngState(0, 12))
samples = [OperatorSample(e, grid, s) for e, s in zip(project_many(dictionary, train_sig, cfg.lam), train_s)]
model, trace = train_unknown_trunk(samples, model, TrainConfig(lr=1e-3, epochs=1500))
print(f"training loss {trace.losses[0]:.2e} -> {min(trace.losses):.2e}")


def test_error(sigs):
    return float(np.mean(evaluate_model(model, [OperatorSample(e, grid, s) for e, s in zip(project_many(dictionary, sigs, cfg.lam), test_s)])))


print(f"test error, random 10-60 point inputs: {test_error(test_sig):.2e}")
dense = [PointCloudSignal(grid, u, i) for i, u in enumerate(test_u)]
for m in (100, 51, 26, 21, 11, 6):
    print(f"test error, {m:3d} uniform sensors: {test_error([rediscretize(d, m) for d in dense]):.2e}")

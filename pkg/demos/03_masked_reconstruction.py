"""Filling in masked data: gappy POD against a learned dictionary.

Each row of the data matrix mixes three fixed functions with random
weights. A growing fraction of every row is hidden. Gappy POD fills the
gaps by alternating an SVD with least-squares fits on the visible
entries, and a three-function learned dictionary is fit to the visible
entries directly. At heavy masking the SVD iteration loses the subspace
while the dictionary keeps working. Random cosines and random ReLU
networks are shown for scale.

Run with ``python demos/03_masked_reconstruction.py`` (a few minutes).
"""

import numpy as np

from rino import DictLearnConfig, MlpSpec, PointCloudSignal, RngState, learn_dictionary_batch
from rino.baselines import GpodConfig, gpod_project, gpod_reconstruct, make_analytic_dictionary
from rino.datagen import make_three_basis_dataset, mask_matrix
from rino.dictionary import reconstruction_errors


def rel(truth, approx):
    return float(np.mean(np.mean((truth - approx) ** 2, axis=1) / np.max(truth**2, axis=1)))


def visible(x, data, mask):
    return [PointCloudSignal(x[~m], row[~m], i) for i, (row, m) in enumerate(zip(data, mask))]


x, train, _ = make_three_basis_dataset(200, 100, RngState(0, 1))
_, test, _ = make_three_basis_dataset(200, 100, RngState(0, 2))
dense_test = [PointCloudSignal(x, row, i) for i, row in enumerate(test)]
cfg = DictLearnConfig(lam=1e-4, tol=1e-12, max_atoms=4, epochs_per_atom=2000, lr=1.66e-4, atom_spec=MlpSpec(1, 1, (20, 20), "sine", 5.0))

print(" masked  gappy POD fill  gappy POD test  dictionary test")
for r in (50, 75, 90):
    mask = mask_matrix(200, 100, r, RngState(0, 21).child(r))
    test_mask = mask_matrix(200, 100, r, RngState(0, 22).child(r))
    g = gpod_reconstruct(train, mask, GpodConfig(rank=3))
    g_test = rel(test, gpod_project(g.modes, test, test_mask))
    d, _ = learn_dictionary_batch(visible(x, train, mask), cfg, rng=RngState(0, 11))
    d_test = float(np.mean(reconstruction_errors(d, visible(x, test, test_mask), cfg.lam, query=dense_test)))
    print(f"  {r:3d}%      {rel(train, g.filled):.2e}        {g_test:.2e}        {d_test:.2e}")

# predefined bases on the same 85%-masked test rows
mask = mask_matrix(200, 100, 85, RngState(0, 22).child(85))
for kind in ("random_cosine", "random_relu", "legendre"):
    errs = [np.mean(reconstruction_errors(make_analytic_dictionary(kind, q, RngState(0, 23)), visible(x, test, mask), 1e-4, query=dense_test)) for q in (3, 10, 100)]
    print(f"{kind:>14}, 85% masked, 3/10/100 functions: " + "  ".join(f"{e:.2e}" for e in errs))

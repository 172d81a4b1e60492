"""Compare the curvature approximations on a small tanh network.

For a 2-4-3-1 network the exact Kronecker block, the cheap diagonal recursion
and a finite-difference probe of the loss are all computed and compared
entry by entry. The diagonal recursion coincides with the exact block at the
layer feeding the readout and is only an approximation further down.
"""

import numpy as np

from bayesid.hessian import fc_hessian_exact, finite_diff_hessian, mac_count, mlp_hessian_diag, unvec
from bayesid.models import MlpNetwork

rng = np.random.default_rng(3)
net = MlpNetwork.init(2, [4, 3], "tanh", bias=True, seed=3)
X, y = rng.normal(size=(16, 2)), rng.normal(size=16)

simp = mlp_hessian_diag(net, X, y, "simplified")
fd = finite_diff_hessian(net, X, y, eps=3e-4)
np.set_printoptions(precision=5, suppress=True)
for layer, name in enumerate(("W1", "W2", "W3")):
    exact = unvec(np.diag(fc_hessian_exact(net, X, y, layer)), net.weights[layer].shape)
    print(f"{name}\n  exact      {exact.ravel()}\n  diagonal   {simp[name].ravel()}"
          f"\n  fin. diff  {fd[name].ravel()}")

print("\nmultiply-accumulates for a 100x100 layer:")
print(f"  diagonal recursion {mac_count('simplified', 100, 100):>12,}")
print(f"  exact block        {mac_count('exact', 100, 100):>12,}")

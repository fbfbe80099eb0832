# The fast-weight inner loop on its own: one step by hand, then a whole scan.
import numpy as np

from reettt.tensor import Tensor
from reettt.ttt import InnerState, batch_inner_loss, batch_inner_step, gram_step_bound, inner_loss, inner_step, ttt_scan

# d = 1: W = 0, k = 1, v = 2, eta = 0.25.  grad = 2 k (k W - v) = -4, so W -> 1
s = inner_step(InnerState(np.zeros((1, 1))), np.array([1.0]), np.array([2.0]), 0.25)
print("W after one step:", s.W[0, 0], "tokens seen:", s.tokens_consumed)

# repeated steps on one token shrink its reconstruction error geometrically
rng = np.random.default_rng(1)
k, v = rng.standard_normal(4), rng.standard_normal(4)
state = InnerState(np.zeros((4, 4)))
for i in range(5):
    print(f"step {i}: loss {inner_loss(k, v, state.W):.6f}")
    state = inner_step(state, k, v, 0.05)

# full-batch descent with the step size from the Gram bound never goes uphill
K, V = rng.standard_normal((12, 4)), rng.standard_normal((12, 4))
W = np.zeros((4, 4))
eta = gram_step_bound(K)
print("eta from Gram bound:", eta)
print("batch loss:", [round(batch_inner_loss(K, V, W := batch_inner_step(W, K, V, eta)), 4) for _ in range(5)])

# a scan over a token sequence: outputs read the weights after each update
Kt, Vt, Qt = (Tensor(rng.standard_normal((1, 6, 3))) for _ in range(3))
W0 = Tensor(np.eye(3))
on = ttt_scan(Kt, Vt, Qt, W0, 0.05, steps=1).data
off = ttt_scan(Kt, Vt, Qt, W0, 0.05, steps=0).data
print("first token, with / without inner updates:", on[0, 0].round(4), off[0, 0].round(4))
print("drift of outputs over the scan:", np.abs(on - off)[0].sum(axis=1).round(4))

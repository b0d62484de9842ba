"""Autoregressive two-layer LSTM controller with hand-written BPTT.

Decision order: ``op_0, op_1, skips_1, op_2, skips_2, ..., op_6, skips_6``.
Node ``i`` chooses one of the operations and then ``i`` independent
Bernoulli skip bits (see ``materialize`` for how they are wired).  The
input to each LSTM step is the embedding of the previous decision; the op
head is a softmax over operations, the skip head a per-predecessor sigmoid.
Everything runs in float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor_core import LayerParams, step_adam

OPS = ("conv3", "conv5", "sepconv3", "sepconv5", "maxpool3", "avgpool3")
NUM_NODES = 7


@dataclass(frozen=True)
class DecisionSequence:
    ops: tuple  # one op id per node
    skips: tuple  # skips[i] is a tuple of i bits

    def __post_init__(self):
        if len(self.ops) != len(self.skips):
            raise ValueError("one skip tuple per node required")
        for i, (op, bits) in enumerate(zip(self.ops, self.skips)):
            if not 0 <= op < len(OPS):
                raise ValueError(f"node {i}: op id {op} out of range")
            if len(bits) != i:
                raise ValueError(f"node {i} needs exactly {i} skip bits, got {len(bits)}")

    @property
    def key(self):
        return (self.ops, self.skips)


def _sig(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _log_softmax(z):
    z = z - z.max()
    return z - np.log(np.exp(z).sum())


def _log_sig(z):
    # log(sigmoid(z)) without overflow
    return -np.logaddexp(0.0, -z)


class ControllerRnn:
    def __init__(self, rng, hidden=64, embed=32, num_nodes=NUM_NODES, num_ops=len(OPS), init_scale=0.1):
        self.hidden, self.embed = hidden, embed
        self.num_nodes, self.num_ops = num_nodes, num_ops
        h, e, p = hidden, embed, max(num_nodes - 1, 1)

        def u(*shape):
            return rng.uniform(-init_scale, init_scale, shape)

        self.params = LayerParams(arrays={
            "go": u(e),
            "op_emb": u(num_ops, e),
            "skip_emb": u(p, e),
            "W1": u(4 * h, e + h), "b1": np.zeros(4 * h),
            "W2": u(4 * h, 2 * h), "b2": np.zeros(4 * h),
            "op_W": u(num_ops, h), "op_b": np.zeros(num_ops),
            "skip_W": u(p, h), "skip_b": np.zeros(p),
        })

    @property
    def arrays(self):
        return self.params.arrays

    # -- one LSTM step ----------------------------------------------------
    def _cell(self, W, b, x, h_prev, c_prev):
        xh = np.concatenate([x, h_prev])
        z = W @ xh + b
        n = self.hidden
        i, f, g, o = _sig(z[:n]), _sig(z[n:2 * n]), np.tanh(z[2 * n:3 * n]), _sig(z[3 * n:])
        c = f * c_prev + i * g
        tc = np.tanh(c)
        return o * tc, c, (xh, i, f, g, o, c_prev, tc)

    def _step(self, x, state):
        (h1, c1), (h2, c2) = state
        a = self.arrays
        h1, c1, k1 = self._cell(a["W1"], a["b1"], x, h1, c1)
        h2, c2, k2 = self._cell(a["W2"], a["b2"], h1, h2, c2)
        return h2, ((h1, c1), (h2, c2)), (k1, k2)

    def run(self, rng=None, decisions: DecisionSequence | None = None):
        """Sample (or teacher-force) one sequence.

        Returns ``(decisions, log_prob, entropy, tape)``; the tape feeds
        :meth:`backward`.
        """
        a = self.arrays
        z0 = np.zeros(self.hidden)
        state = ((z0, z0), (z0, z0))
        x, x_src = a["go"], ("go",)
        ops, skips, tape = [], [], []
        logp = ent = 0.0
        for node in range(self.num_nodes):
            h, state, caches = self._step(x, state)
            logits = a["op_W"] @ h + a["op_b"]
            lp = _log_softmax(logits)
            p = np.exp(lp)
            if decisions is None:
                op = int(rng.choice(self.num_ops, p=p))
            else:
                op = decisions.ops[node]
            logp += lp[op]
            ent -= float(p @ lp)
            tape.append(("op", x_src, caches, h, p, lp, op))
            ops.append(op)
            x, x_src = a["op_emb"][op], ("op_emb", op)
            if node == 0:
                skips.append(())
                continue
            h, state, caches = self._step(x, state)
            zs = a["skip_W"][:node] @ h + a["skip_b"][:node]
            s = _sig(zs)
            if decisions is None:
                bits = tuple(int(v) for v in (rng.random(node) < s))
            else:
                bits = tuple(decisions.skips[node])
            bv = np.asarray(bits, dtype=np.float64)
            logp += float(np.sum(bv * _log_sig(zs) + (1 - bv) * _log_sig(-zs)))
            ent += float(np.sum(-s * _log_sig(zs) - (1 - s) * _log_sig(-zs)))
            tape.append(("skip", x_src, caches, h, s, zs, bv))
            skips.append(bits)
            x, x_src = bv @ a["skip_emb"][:node], ("skip_emb", bv)
        seq = DecisionSequence(tuple(ops), tuple(skips))
        return seq, float(logp), float(ent), tape

    def log_prob(self, decisions: DecisionSequence) -> float:
        return self.run(decisions=decisions)[1]

    def sample(self, rng):
        seq, logp, ent, _ = self.run(rng)
        return seq, logp, ent

    def op_probabilities(self, decisions: DecisionSequence):
        """Softmax over ops at every node, conditioned on ``decisions`` so far."""
        _, _, _, tape = self.run(decisions=decisions)
        return np.array([t[4] for t in tape if t[0] == "op"])

    # -- gradients ----------------------------------------------------------
    def _cell_back(self, W, dW, db, cache, dh, dc):
        xh, i, f, g, o, c_prev, tc = cache
        do = dh * tc
        dc = dc + dh * o * (1 - tc * tc)
        di, dg, df, dc_prev = dc * g, dc * i, dc * c_prev, dc * f
        dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)])
        dW += np.outer(dz, xh)
        db += dz
        dxh = W.T @ dz
        n_in = len(xh) - self.hidden
        return dxh[:n_in], dxh[n_in:], dc_prev

    def backward(self, tape, coef_logp=1.0, coef_ent=0.0):
        """Gradient of ``coef_logp * log_prob + coef_ent * entropy`` for a recorded run."""
        a = self.arrays
        g = {k: np.zeros_like(v) for k, v in a.items()}
        n = self.hidden
        dh_next = [np.zeros(n), np.zeros(n)]
        dc_next = [np.zeros(n), np.zeros(n)]
        for kind, x_src, (k1, k2), h, prob, aux, choice in reversed(tape):
            if kind == "op":
                lp = aux
                onehot = np.zeros_like(prob)
                onehot[choice] = 1.0
                ent = -float(prob @ lp)
                dz = coef_logp * (onehot - prob) + coef_ent * (-prob * (lp + ent))
                g["op_W"] += np.outer(dz, h)
                g["op_b"] += dz
                dh = a["op_W"].T @ dz
            else:
                zs, bits = aux, choice
                m = len(zs)
                dz = coef_logp * (bits - prob) + coef_ent * (-zs * prob * (1 - prob))
                g["skip_W"][:m] += np.outer(dz, h)
                g["skip_b"][:m] += dz
                dh = a["skip_W"][:m].T @ dz
            dx2, dh_prev2, dc_prev2 = self._cell_back(a["W2"], g["W2"], g["b2"], k2, dh + dh_next[1], dc_next[1])
            dx1, dh_prev1, dc_prev1 = self._cell_back(a["W1"], g["W1"], g["b1"], k1, dx2 + dh_next[0], dc_next[0])
            dh_next, dc_next = [dh_prev1, dh_prev2], [dc_prev1, dc_prev2]
            if x_src[0] == "go":
                g["go"] += dx1
            elif x_src[0] == "op_emb":
                g["op_emb"][x_src[1]] += dx1
            else:
                bv = x_src[1]
                g["skip_emb"][:len(bv)] += np.outer(bv, dx1)
        return g


@dataclass
class RewardBaseline:
    decay: float = 0.95
    value: float | None = None

    def update(self, reward):
        self.value = reward if self.value is None else self.decay * self.value + (1 - self.decay) * reward
        return self.value


def reinforce_step(controller: ControllerRnn, samples, rewards, baseline: RewardBaseline,
                   lr=1e-3, entropy_weight=1e-4):
    """One ADAM step on ``-(r - b) * log_prob - entropy_weight * entropy``, averaged over ``samples``.

    ``samples`` holds ``(decisions, tape)`` pairs from :meth:`ControllerRnn.run`.
    The advantage uses the baseline from before this batch; the baseline is
    then updated with each reward in order.  Returns the mean advantage.
    """
    if any(not 0.0 <= r <= 1.0 for r in rewards):
        raise ValueError("rewards must lie in [0, 1]")
    b = baseline.value if baseline.value is not None else float(np.mean(rewards))
    total = None
    advs = []
    for (_, tape), r in zip(samples, rewards):
        adv = r - b
        advs.append(adv)
        g = controller.backward(tape, coef_logp=-adv, coef_ent=-entropy_weight)
        total = g if total is None else {k: total[k] + g[k] for k in g}
    grads = {k: v / len(samples) for k, v in total.items()}
    step_adam(controller.params, grads, lr)
    for r in rewards:
        baseline.update(r)
    return float(np.mean(advs))

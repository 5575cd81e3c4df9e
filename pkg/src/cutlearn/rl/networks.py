"""Actor and critic networks.

Both share one layout: a causal dilated TCN turns the n x 3 force history
into 64 features, a small MLP turns the remaining observation (plus the
action, for critics) into 64 features, and a fusion MLP maps the
concatenation to the output.  Every network owns its encoders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from ..errors import ShapeMismatch

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
FEATURES = 64


@dataclass(frozen=True)
class NetworkSpec:
    history: int = 12
    wrench_dim: int = 3
    vector_dim: int = 12
    action_dim: int = 6
    tcn_channels: int = 16
    kernel: int = 3
    dilations: tuple = (1, 2, 4)
    hidden: int = 128

    @property
    def receptive_field(self) -> int:
        return 1 + (self.kernel - 1) * sum(self.dilations)


class CausalConv(nn.Module):
    """Causal dilated 1-D convolution on (batch, time, channels) tensors.

    The K taps are gathered as shifted views and contracted with one matmul,
    which on short histories is much cheaper than the generic conv kernel.
    """

    def __init__(self, c_in: int, c_out: int, kernel: int, dilation: int):
        super().__init__()
        self.kernel, self.dilation = kernel, dilation
        self.linear = nn.Linear(kernel * c_in, c_out)

    def forward(self, x):
        steps = x.shape[1]
        pad = (self.kernel - 1) * self.dilation
        xp = F.pad(x, (0, 0, pad, 0))
        taps = [xp[:, k * self.dilation : k * self.dilation + steps] for k in range(self.kernel)]
        return self.linear(torch.cat(taps, dim=2))


class CausalBlock(nn.Module):
    """One dilated causal convolution with a residual connection."""

    def __init__(self, c_in: int, c_out: int, kernel: int, dilation: int):
        super().__init__()
        self.conv = CausalConv(c_in, c_out, kernel, dilation)
        self.skip = nn.Linear(c_in, c_out) if c_in != c_out else nn.Identity()

    def forward(self, x):
        return F.relu(self.conv(x) + self.skip(x))


class TCN(nn.Module):
    """(batch, n, W) history -> (batch, 64) features from the newest step."""

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        layers, c_in = [], spec.wrench_dim
        for d in spec.dilations:
            layers.append(CausalBlock(c_in, spec.tcn_channels, spec.kernel, d))
            c_in = spec.tcn_channels
        self.blocks = nn.Sequential(*layers)
        self.head = nn.Linear(spec.tcn_channels, FEATURES)
        self.spec = spec

    def forward(self, history):
        if history.dim() != 3 or history.shape[1:] != (self.spec.history, self.spec.wrench_dim):
            raise ShapeMismatch(
                f"force history must be (batch, {self.spec.history}, {self.spec.wrench_dim}), "
                f"got {tuple(history.shape)}"
            )
        h = self.blocks(history)
        return F.relu(self.head(h[:, -1]))


class _Fused(nn.Module):
    def __init__(self, spec: NetworkSpec, extra_in: int, out: int):
        super().__init__()
        self.spec = spec
        self.tcn = TCN(spec)
        self.mlp = nn.Sequential(nn.Linear(spec.vector_dim + extra_in, FEATURES), nn.ReLU())
        self.fusion = nn.Sequential(
            nn.Linear(2 * FEATURES, spec.hidden),
            nn.ReLU(),
            nn.Linear(spec.hidden, spec.hidden),
            nn.ReLU(),
            nn.Linear(spec.hidden, out),
        )

    def features(self, history, vector):
        if vector.dim() != 2 or vector.shape[1] != self.mlp[0].in_features:
            raise ShapeMismatch(
                f"vector input must be (batch, {self.mlp[0].in_features}), got {tuple(vector.shape)}"
            )
        return torch.cat([self.tcn(history), self.mlp(vector)], dim=1)


class Actor(_Fused):
    def __init__(self, spec: NetworkSpec):
        super().__init__(spec, 0, 2 * spec.action_dim)

    def forward(self, history, vector):
        out = self.fusion(self.features(history, vector))
        mean, log_std = out.chunk(2, dim=1)
        return mean, log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)

    def sample(self, history, vector, generator=None):
        """Reparameterized tanh-Gaussian draw and its exact log-density."""
        mean, log_std = self(history, vector)
        std = log_std.exp()
        eps = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
        pre = mean + std * eps
        action = torch.tanh(pre)
        log_prob = (-0.5 * eps.pow(2) - log_std - 0.5 * math.log(2 * math.pi)).sum(1)
        # log(1 - tanh(x)^2) written stably
        log_prob = log_prob - (2.0 * (math.log(2.0) - pre - F.softplus(-2.0 * pre))).sum(1)
        return action, log_prob

    def deterministic(self, history, vector):
        return torch.tanh(self(history, vector)[0])


class Critic(_Fused):
    def __init__(self, spec: NetworkSpec):
        super().__init__(spec, spec.action_dim, 1)

    def forward(self, history, vector, action):
        return self.fusion(self.features(history, torch.cat([vector, action], dim=1))).squeeze(1)

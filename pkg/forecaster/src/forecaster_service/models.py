"""Forecast samplers hosted by the service.

Two deterministic stubs (a constant block and a Gaussian vector-AR process)
cover integration testing without any trained artifact; the diffusion
sampler is a compact denoising-diffusion forecaster conditioned on an RNN
encoding of the history, sampling one step at a time autoregressively.
torch is imported lazily so the stub modes have no heavy dependencies.
"""

from __future__ import annotations

import numpy as np

_SEED_MASK = (1 << 63) - 1


class SamplerBackend:
    """Produces an (m, h, d) array for a validated request."""

    d: int = 1

    def sample(self, history: np.ndarray, m: int, h: int, seed: int) -> np.ndarray:
        raise NotImplementedError


class ConstantBackend(SamplerBackend):
    def __init__(self, value: float, d: int):
        self.value = float(value)
        self.d = d

    def sample(self, history, m, h, seed):
        return np.full((m, h, self.d), self.value)


class GaussianARBackend(SamplerBackend):
    """x_{t+1} = intercept + transition @ x_t + noise, from the last row.

    Matches the synthetic VAR process used by tree-building clients: same
    parameters and seed give the same distribution (agreement is checked
    statistically, not bit-for-bit).
    """

    def __init__(self, transition, intercept, noise_scale):
        self.transition = np.atleast_2d(np.asarray(transition, dtype=float))
        self.intercept = np.atleast_1d(np.asarray(intercept, dtype=float))
        self.noise_scale = np.atleast_1d(np.asarray(noise_scale, dtype=float))
        self.d = self.intercept.size
        if self.transition.shape != (self.d, self.d):
            raise ValueError("transition must be d x d")
        if self.noise_scale.size != self.d or np.any(self.noise_scale < 0):
            raise ValueError("noise_scale must be d non-negative entries")
        radius = float(np.max(np.abs(np.linalg.eigvals(self.transition))))
        if radius >= 1.0:
            raise ValueError(f"transition spectral radius {radius:.4f} >= 1")

    def sample(self, history, m, h, seed):
        rng = np.random.default_rng(seed)
        out = np.empty((m, h, self.d))
        x = np.tile(history[-1], (m, 1))
        for t in range(h):
            noise = rng.standard_normal((m, self.d)) * self.noise_scale
            x = self.intercept + x @ self.transition.T + noise
            out[:, t, :] = x
        return out


class DiffusionBackend(SamplerBackend):
    """Autoregressive DDPM forecaster with a GRU history encoder.

    Histories are standardized per request; each future step is drawn by
    ancestral sampling of a small conditional denoiser, then fed back into
    the encoder. Sampling is seeded; determinism is best effort (same
    process, same torch build), which is why tests pin the stub modes.
    """

    def __init__(self, model_path: str):
        import torch

        payload = torch.load(model_path, map_location="cpu", weights_only=False)
        self.hyper = payload["hyper"]
        self.d = int(self.hyper["d"])
        self.net = _build_network(self.hyper)
        self.net.load_state_dict(payload["state"])
        self.net.eval()
        steps = int(self.hyper["steps"])
        betas = np.linspace(1e-4, 0.02, steps)
        alphas = 1.0 - betas
        self.betas = betas
        self.alphas = alphas
        self.alpha_bars = np.cumprod(alphas)

    def sample(self, history, m, h, seed):
        import torch

        hist = np.asarray(history, dtype=float)
        mu = hist.mean(axis=0)
        sigma = hist.std(axis=0)
        sigma = np.where(sigma < 1e-8, 1.0, sigma)
        norm_hist = (hist - mu) / sigma

        gen = torch.Generator().manual_seed(int(seed) & _SEED_MASK)
        with torch.no_grad():
            ctx = torch.as_tensor(norm_hist, dtype=torch.float32)
            ctx = ctx.unsqueeze(0).expand(m, -1, -1)  # (m, T, d)
            _, hidden = self.net.encoder(ctx)
            hidden = hidden[-1]  # (m, hidden_dim)
            steps = len(self.betas)
            out = np.empty((m, h, self.d))
            for t in range(h):
                x = torch.randn((m, self.d), generator=gen)
                for k in reversed(range(steps)):
                    t_feat = torch.full((m, 1), (k + 1) / steps)
                    eps = self.net.denoiser(
                        torch.cat([x, hidden, t_feat], dim=1)
                    )
                    alpha = self.alphas[k]
                    alpha_bar = self.alpha_bars[k]
                    coef = (1 - alpha) / np.sqrt(1 - alpha_bar)
                    x = (x - coef * eps) / np.sqrt(alpha)
                    if k > 0:
                        noise = torch.randn((m, self.d), generator=gen)
                        x = x + np.sqrt(self.betas[k]) * noise
                out[:, t, :] = x.numpy()
                _, hidden = self.net.encoder(x.unsqueeze(1), hidden.unsqueeze(0))
                hidden = hidden[-1]
        return out * sigma + mu


def _build_network(hyper: dict):
    import torch

    class Net(torch.nn.Module):
        def __init__(self, d, hidden, width):
            super().__init__()
            self.encoder = torch.nn.GRU(d, hidden, batch_first=True)
            self.denoiser = torch.nn.Sequential(
                torch.nn.Linear(d + hidden + 1, width),
                torch.nn.SiLU(),
                torch.nn.Linear(width, width),
                torch.nn.SiLU(),
                torch.nn.Linear(width, d),
            )

    return Net(int(hyper["d"]), int(hyper["hidden"]), int(hyper["width"]))


def save_untrained(path: str, d: int = 1, hidden: int = 32, width: int = 64,
                   steps: int = 24, seed: int = 0) -> None:
    """Write a freshly initialized (untrained) diffusion artifact.

    Useful for wiring and smoke tests; training is out of scope here.
    """
    import torch

    torch.manual_seed(seed)
    hyper = {"d": d, "hidden": hidden, "width": width, "steps": steps}
    net = _build_network(hyper)
    torch.save({"hyper": hyper, "state": net.state_dict()}, path)


def backend_from_config(config) -> SamplerBackend:
    if config.mode == "stub_constant":
        return ConstantBackend(config.value, config.d)
    if config.mode == "stub_gaussian":
        return GaussianARBackend(config.transition, config.intercept, config.noise_scale)
    return DiffusionBackend(config.model_path)

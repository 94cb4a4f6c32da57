"""Line-protocol forecasting service with diffusion and stub backends."""

from .config import ServiceConfig, load_config
from .models import (
    ConstantBackend,
    DiffusionBackend,
    GaussianARBackend,
    SamplerBackend,
    backend_from_config,
    save_untrained,
)
from .service import Session, TcpService, serve, serve_stdio, serve_tcp

__version__ = "0.1.0"

from .app import create_app, load_api_schema, serve
from .deployment import (
    BindFailure,
    DeploymentConfig,
    DeploymentError,
    NodeInfo,
    load_deployment_config,
)

__all__ = [
    "BindFailure",
    "DeploymentConfig",
    "DeploymentError",
    "NodeInfo",
    "create_app",
    "load_api_schema",
    "load_deployment_config",
    "serve",
]

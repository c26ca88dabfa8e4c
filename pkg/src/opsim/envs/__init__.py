from .inventory import SingleEchelonConfig, SingleEchelonEnv, SerialChainConfig, SerialChainEnv
from .pricing import PricingConfig, PricingEnv, CompetitorProcess
from .recsys import RecsysConfig, RecsysEnv, AlphaConstraintViolated
from .collab import CollabConfig, CollabEnv

__all__ = [
    "SingleEchelonConfig",
    "SingleEchelonEnv",
    "SerialChainConfig",
    "SerialChainEnv",
    "PricingConfig",
    "PricingEnv",
    "CompetitorProcess",
    "RecsysConfig",
    "RecsysEnv",
    "AlphaConstraintViolated",
    "CollabConfig",
    "CollabEnv",
]

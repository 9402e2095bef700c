"""Per-IC provenance tokens tracked on a permissioned, replicated ledger."""
from .consensus import Behavior, Network, NetworkConfig
from .token_model import ICKeyBox, ICMetadata, ICToken, Stage, Status, TOKEN_SIZE, decode, encode
from .tracker import NodeState, Tracker, verify_chain
from .wallet import Wallet

__all__ = [
    "Behavior", "ICKeyBox", "ICMetadata", "ICToken", "Network", "NetworkConfig",
    "NodeState", "Stage", "Status", "TOKEN_SIZE", "Tracker", "Wallet",
    "decode", "encode", "verify_chain",
]
__version__ = "0.1.0"

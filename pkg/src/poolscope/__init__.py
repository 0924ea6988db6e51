"""Mining-pool forensics on Bitcoin-style chain dumps.

Attribute blocks to pools, cluster addresses with the multiple-input
heuristic, detect pool payout transactions and measure concentration.
"""

__version__ = "0.1.0"

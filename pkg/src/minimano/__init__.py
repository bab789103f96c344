"""minimano: a desk-scale NFV management and orchestration system.

Declarative stack deployment over a simulated cloud (compute, network,
block and object storage), multi-tenant identity with a service catalog,
and autonomic control loops (threshold autoscaling, self-healing) driven
by a deterministic logical clock.
"""

__version__ = "0.1.0"

from .world import World  # noqa: F401

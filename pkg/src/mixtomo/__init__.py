"""Neural-network mixed-state tomography at desk scale.

Qubit ordering: qubit 0 is the most significant bit of a computational-basis
index, everywhere in the package.
"""

__version__ = "0.1.0"

MAX_QUBITS = 8

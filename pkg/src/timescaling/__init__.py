"""Learning-dynamics toolkit for softmax teacher/student models.

Simulates online training of a linear (or residual-MLP) softmax student
against a teacher of controlled inverse temperature, estimates the
thermodynamic quantities of the aligned student, integrates the resulting
one-dimensional dynamics and fits power laws to loss curves.
"""

__version__ = "0.1.0"

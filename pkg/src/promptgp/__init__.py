"""Grammar-guided evolutionary search over prompt-edit programs.

A sectioned base prompt is rewritten by small programs of text-edit
operations.  Programs are evolved with grammar-guided genetic programming
against task fitness, then refined by a surrogate-screened local search
over the numeric indices inside the best program.
"""

__version__ = "0.1.0"

SECTIONS = ("persona", "task", "output", "icl", "context", "cot")

"""Guest-side toolkit: module emission, canonical guests, data layouts."""

from .ddo import (decode_f64_vector, decode_sparse_columns,
                  encode_f64_vector, encode_sparse_columns, entries_base,
                  make_regression)
from .emit import GuestModule, push_key
from .guests import (counter_global, counter_local, echo, heavy_init,
                     heavy_init_reference, noop)

__all__ = [
    "decode_f64_vector", "decode_sparse_columns", "encode_f64_vector",
    "encode_sparse_columns", "entries_base", "make_regression",
    "GuestModule", "push_key", "counter_global", "counter_local", "echo",
    "heavy_init", "heavy_init_reference", "noop",
]

import threading

import numpy as np

from ctal.errors import DimensionError
from ctal.tensor import functional as F
from ctal.tensor.nn import Linear, Module


class MultiHeadAttention(Module):
    """
    Scaled dot-product attention over `num_heads` heads of width
    hidden_size / num_heads, with input and output projections.

    The probabilities of the calling thread's last call are kept in
    `last_attention` ([B, A, Lq, Lk]) and the key/value input in
    `last_memory`, so concurrent shards never see each other's state.
    """

    def __init__(self, hidden_size, num_heads):
        super(MultiHeadAttention, self).__init__()
        if hidden_size % num_heads != 0:
            raise DimensionError(f"hidden size {hidden_size} is not divisible by {num_heads} heads")
        self.num_heads = num_heads
        self.head_size = hidden_size // num_heads
        self.query = Linear(hidden_size, hidden_size)
        self.key = Linear(hidden_size, hidden_size)
        self.value = Linear(hidden_size, hidden_size)
        self.output = Linear(hidden_size, hidden_size)
        self._inspection = threading.local()

    @property
    def last_attention(self):
        return getattr(self._inspection, "attention", None)

    @property
    def last_memory(self):
        return getattr(self._inspection, "memory", None)

    def _split(self, x):
        batch, length, _ = x.shape
        return x.reshape(batch, length, self.num_heads, self.head_size).transpose(0, 2, 1, 3)

    def forward(self, query_input, memory, key_mask=None):
        """
        :param query_input: [B, Lq, d]
        :param memory: [B, Lk, d], source of keys and values
        :param key_mask: [B, Lk] bool, True for real positions
        """
        batch, query_length, hidden = query_input.shape
        q = self._split(self.query(query_input))
        k = self._split(self.key(memory))
        v = self._split(self.value(memory))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(self.head_size))
        mask = None
        if key_mask is not None:
            mask = np.asarray(key_mask, dtype=bool)[:, None, None, :]
        probs = F.softmax(scores, mask=mask, axis=-1)
        self._inspection.attention = probs.data
        self._inspection.memory = memory
        context = (probs @ v).transpose(0, 2, 1, 3).reshape(batch, query_length, hidden)
        return self.output(context)

from dataclasses import dataclass

import numpy as np

from ctal.errors import DimensionError


@dataclass
class Node:
    index: int
    op: str
    tensor: object
    inputs: tuple


class ComputeGraph:
    """
    The operation records reachable from a root tensor, in topological order
    (every node appears after all of its inputs).
    """

    def __init__(self, nodes):
        self.nodes = nodes

    def __len__(self):
        return len(self.nodes)

    @classmethod
    def trace(cls, root):
        order = []
        seen = set()
        stack = [(root, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in seen:
                continue
            seen.add(id(tensor))
            stack.append((tensor, True))
            for parent in tensor._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        positions = {id(t): i for i, t in enumerate(order)}
        nodes = [Node(i, t._op, t, tuple(positions[id(p)] for p in t._parents if id(p) in positions))
                 for i, t in enumerate(order)]
        return cls(nodes)

    def leaves(self):
        return [node.tensor for node in self.nodes if node.tensor.is_leaf]


def backward(loss, graph=None, accumulate_into=None):
    """
    Propagates d(loss)/d(leaf) to every leaf that requires gradients.

    Intermediate gradients live only in this call, so backward passes over
    disjoint graphs may run concurrently. Leaf gradients are added to
    `tensor.grad`, or to `accumulate_into[tensor]` when a dict is given.

    :param loss: scalar tensor
    :param graph: a pre-traced ComputeGraph of `loss`, traced here if omitted
    :param accumulate_into: optional dict receiving leaf gradients
    :return: the graph that was walked
    """
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return ComputeGraph([])
    if graph is None:
        graph = ComputeGraph.trace(loss)

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        tensor = node.tensor
        grad = grads.pop(id(tensor), None)
        if grad is None:
            continue
        if tensor.is_leaf:
            grad = np.asarray(grad, dtype=tensor.dtype).reshape(tensor.shape)
            if accumulate_into is not None:
                previous = accumulate_into.get(tensor)
                accumulate_into[tensor] = grad.copy() if previous is None else previous + grad
            else:
                tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
            continue
        for parent, parent_grad in zip(tensor._parents, tensor._backward(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            previous = grads.get(id(parent))
            grads[id(parent)] = parent_grad if previous is None else previous + parent_grad
    return graph

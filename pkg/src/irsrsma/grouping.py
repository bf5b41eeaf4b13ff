"""Greedy decode-order search over the successive-decoding groups.

Starting from everything in the first group, each step finds the device with
the minimum rate and pushes its weaker sub-message one group later (two
later when its sibling occupies the next group, so sub-messages of one
device never share a group once separated). Stops when the weakest
sub-message already decodes last, when the sibling rule blocks the move, or
after K*I*(L-1) moves. The verbatim variant returns the state before the
last accepted move; best_so_far returns the best iterate seen.
"""

from dataclasses import dataclass, replace

import numpy as np

from .numerics import ValidationError
from .rates import initial_partition, subrates_all


@dataclass
class GroupResult:
    partition: "GroupPartition"
    trace: list    # min device rate at every visited iterate, initial first
    moves: int     # accepted moves contained in the returned partition


def greedy_group(state, channels, sigma2, l_groups, csit=None, best_so_far=False):
    """Run the greedy grouping search at the state's (g, v, p)."""
    k_dev, n_sub = state.K, state.I
    if l_groups > k_dev * n_sub:
        raise ValidationError("more groups than sub-messages")
    t_max = k_dev * n_sub * (l_groups - 1)

    part = initial_partition(k_dev, n_sub, l_groups)
    history = [part]
    trace = []
    t = 0
    while True:
        rates = subrates_all(replace(state, partition=part), channels, sigma2, csit=csit)
        trace.append(float(rates.sum(axis=1).min()))
        k_star = int(np.argmin(rates.sum(axis=1)))
        i_star = int(np.argmin(rates[k_star]))
        l = part.group_of(k_star, i_star)
        stop = False
        if l < l_groups - 1:
            sibling_next = n_sub == 2 and (k_star, 1 - i_star) in part.groups[l + 1]
            if not sibling_next:
                part = part.move(k_star, i_star, l + 1)
                t += 1
                history.append(part)
            elif l < l_groups - 2:
                part = part.move(k_star, i_star, l + 2)
                t += 1
                history.append(part)
            else:
                stop = True
        else:
            stop = True
        if stop or t > t_max:
            break

    if best_so_far:
        # trace may be one short of history when the loop ended on a move cap
        while len(trace) < len(history):
            rates = subrates_all(replace(state, partition=history[len(trace)]),
                                 channels, sigma2, csit=csit)
            trace.append(float(rates.sum(axis=1).min()))
        best = int(np.argmax(trace))
        return GroupResult(partition=history[best], trace=trace, moves=best)

    # verbatim return of the penultimate iterate
    idx = max(0, len(history) - 2)
    return GroupResult(partition=history[idx], trace=trace, moves=idx)

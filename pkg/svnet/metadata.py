"""
Module containing state codes and the families of state pairs that are tested when
building grouping and lead-lag networks.
"""
import os
from enum import Enum, IntEnum
from itertools import product
from typing import Any, Dict, Tuple

import svnet.data
from svnet.exceptions import ConfigException

StatePair = Tuple[int, int]


class StateEnum(IntEnum):
    SELL = -1
    NEUTRAL = 0
    BUY = 1
    NA = 127


class StateAlphabet(str, Enum):
    # buy / sell / neutral / inactive
    SIGNED = 'signed'
    # active / inactive
    ACTIVITY = 'activity'


ACTIVE = int(StateEnum.BUY)
INACTIVE = int(StateEnum.NEUTRAL)

_alphabet_states: Dict[StateAlphabet, Tuple[int, ...]] = {
    StateAlphabet.SIGNED: (int(StateEnum.BUY), int(StateEnum.SELL),
                           int(StateEnum.NEUTRAL)),
    StateAlphabet.ACTIVITY: (ACTIVE, INACTIVE),
}

_grouping_pairs: Dict[StateAlphabet, Tuple[StatePair, ...]] = {
    StateAlphabet.SIGNED: ((1, 1), (-1, -1), (0, 0)),
    StateAlphabet.ACTIVITY: ((ACTIVE, ACTIVE),),
}


def get_alphabet(value: Any) -> StateAlphabet:
    try:
        return StateAlphabet(value)
    except ValueError:
        raise ConfigException(f'Unknown state alphabet: {value!r}')


def alphabet_states(alphabet: StateAlphabet) -> Tuple[int, ...]:
    """States that can match in a co-occurrence test; NA never matches."""
    return _alphabet_states[alphabet]


def grouping_pairs(alphabet: StateAlphabet = StateAlphabet.SIGNED) \
        -> Tuple[StatePair, ...]:
    return _grouping_pairs[alphabet]


def leadlag_pairs(alphabet: StateAlphabet = StateAlphabet.SIGNED) \
        -> Tuple[StatePair, ...]:
    states = alphabet_states(alphabet)
    return tuple(product(states, states))


def state_label(state: int) -> str:
    return 'NA' if state == StateEnum.NA else str(int(state))


def default_config_path(name: str = 'defaults.toml') -> str:
    return os.path.join(os.path.dirname(svnet.data.__file__), name)

"""
Synthetic datasets with known cluster labels: half-moons, star-shaped
clusters, the two-cubes and two-balls models, Gaussian mixtures and a
five-by-five hierarchy with two super-clusters.
"""
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from sklearn.datasets import make_blobs, make_moons

from clustering.exceptions import InvalidArgument
from clustering.problem import DataMatrix
from clustering.streams import named_stream, stream_seed

GENERATOR_KINDS = ('half_moons', 'star_shaped', 'two_cubes', 'gaussian_mixture', 'hierarchy_5x5', 'two_balls')

DEFAULT_SIZES = {
    'half_moons': (20, 20),
    'star_shaped': (30, 30, 30),
    'two_cubes': (10, 10),
    'gaussian_mixture': (20, 20, 20),
    'hierarchy_5x5': (5, 5, 5, 5, 5),
    'two_balls': (20, 20),
}
DEFAULT_NOISE = {
    'half_moons': 0.05,
    'star_shaped': 0.0,
    'two_cubes': 0.0,
    'gaussian_mixture': 1.0,
    'hierarchy_5x5': 0.1,
    'two_balls': 0.0,
}
DEFAULT_PARAMS = {
    'half_moons': {},
    'star_shaped': {'arm_length': 1.0, 'arm_width': 0.3, 'gap': 2.0, 'arms': 5},
    'two_cubes': {'half_edge_1': 0.5, 'half_edge_2': 0.5, 'distance': 2.0, 'dimension': 2},
    'gaussian_mixture': {'dimension': 2},
    'hierarchy_5x5': {'spread': 3.0, 'separation': 12.0},
    'two_balls': {'separation': 1.5, 'dimension': 2},
}
# super-cluster of each of the five hierarchy clusters
HIERARCHY_META = (0, 0, 0, 1, 1)


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    sizes: Tuple[int, ...] = None
    noise: float = None
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise InvalidArgument('Unknown generator %s' % self.kind)
        sizes = DEFAULT_SIZES[self.kind] if self.sizes is None else tuple(int(size) for size in self.sizes)
        if any(size < 1 for size in sizes):
            raise InvalidArgument('Cluster sizes must be at least 1')
        if self.kind == 'hierarchy_5x5' and sizes != DEFAULT_SIZES['hierarchy_5x5']:
            raise InvalidArgument('hierarchy_5x5 has five clusters of five points')
        if self.kind in ('half_moons', 'two_cubes', 'two_balls') and len(sizes) != 2:
            raise InvalidArgument('%s needs exactly two cluster sizes' % self.kind)
        if self.kind == 'star_shaped' and len(sizes) != 3:
            raise InvalidArgument('star_shaped needs exactly three cluster sizes')
        noise = DEFAULT_NOISE[self.kind] if self.noise is None else float(self.noise)
        if not noise >= 0:
            raise InvalidArgument('Noise level must be nonnegative')
        unknown = set(self.params) - set(DEFAULT_PARAMS[self.kind])
        if unknown:
            raise InvalidArgument('Unknown %s parameters: %s' % (self.kind, ', '.join(sorted(unknown))))
        params = dict(DEFAULT_PARAMS[self.kind], **self.params)
        object.__setattr__(self, 'sizes', sizes)
        object.__setattr__(self, 'noise', noise)
        object.__setattr__(self, 'params', params)

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> 'GeneratorSpec':
        """
        ``kind`` or ``kind:key=value,...``; sizes are written ``sizes=20x20``
        and the noise level ``noise=0.1``
        """
        kind, _, arguments = text.strip().partition(':')
        sizes, noise, params = None, None, {}
        for argument in filter(None, arguments.split(',')):
            key, separator, value = argument.partition('=')
            key = key.strip()
            if not separator:
                raise InvalidArgument('Generator argument %s is not key=value' % argument)
            try:
                if key == 'sizes':
                    sizes = tuple(int(size) for size in value.split('x'))
                elif key == 'noise':
                    noise = float(value)
                elif key in ('arms', 'dimension'):
                    params[key] = int(value)
                else:
                    params[key] = float(value)
            except ValueError:
                raise InvalidArgument('Cannot parse generator argument %s' % argument)
        return cls(kind.strip(), sizes, noise, seed, params)

    def describe(self) -> str:
        arguments = ['sizes=%s' % 'x'.join(str(size) for size in self.sizes), 'noise=%r' % self.noise]
        arguments += ['%s=%r' % (key, self.params[key]) for key in sorted(self.params)]
        return '%s:%s' % (self.kind, ','.join(arguments))


def _labels(sizes) -> np.ndarray:
    return np.repeat(np.arange(len(sizes)), sizes)


def _half_moons(spec: GeneratorSpec, rng: np.random.Generator):
    points, labels = make_moons(n_samples=spec.sizes, noise=spec.noise or None, shuffle=False,
                                random_state=stream_seed(spec.seed, 'generate:half_moons'))
    return points.T, labels


def _triangle_points(rng: np.random.Generator, count: int, apex, left, right) -> np.ndarray:
    first, second = rng.random(count), rng.random(count)
    flip = first + second > 1
    first[flip], second[flip] = 1 - first[flip], 1 - second[flip]
    return apex[:, None] + first * (left - apex)[:, None] + second * (right - apex)[:, None]


def _star(rng: np.random.Generator, count: int, centre: np.ndarray, arms: int, length: float, width: float):
    """
    Points uniform over ``arms`` isosceles triangles whose bases meet at the centre
    """
    arm_of = rng.integers(0, arms, size=count)
    points = np.empty((2, count))
    for arm in range(arms):
        chosen = np.flatnonzero(arm_of == arm)
        angle = np.pi / 2 + 2 * np.pi * arm / arms
        direction = np.array([np.cos(angle), np.sin(angle)])
        normal = np.array([-direction[1], direction[0]])
        tip = centre + length * direction
        points[:, chosen] = _triangle_points(rng, chosen.size, tip, centre + width * normal, centre - width * normal)
    return points


def _star_shaped(spec: GeneratorSpec, rng: np.random.Generator):
    params = spec.params
    spacing = 2 * params['arm_length'] + params['gap']
    stars = [_star(rng, size, np.array([k * spacing, 0.0]), int(params['arms']), params['arm_length'],
                   params['arm_width']) for k, size in enumerate(spec.sizes)]
    points = np.concatenate(stars, axis=1)
    if spec.noise > 0:
        points = points + spec.noise * rng.standard_normal(points.shape)
    return points, _labels(spec.sizes)


def cube_half_edges(spec: GeneratorSpec):
    """
    Half-edge vectors s_1, s_2 of the two cubes
    """
    dimension = int(spec.params['dimension'])
    return (np.full(dimension, spec.params['half_edge_1']), np.full(dimension, spec.params['half_edge_2']))


def _two_cubes(spec: GeneratorSpec, rng: np.random.Generator):
    params = spec.params
    dimension = int(params['dimension'])
    first, second = params['half_edge_1'], params['half_edge_2']
    if first < 0 or second < 0 or params['distance'] < 0:
        raise InvalidArgument('Cube half edges and distance must be nonnegative')
    offset = np.zeros(dimension)
    offset[0] = first + second + params['distance']
    cube_1 = first * rng.uniform(-1.0, 1.0, size=(dimension, spec.sizes[0]))
    cube_2 = offset[:, None] + second * rng.uniform(-1.0, 1.0, size=(dimension, spec.sizes[1]))
    return np.concatenate([cube_1, cube_2], axis=1), _labels(spec.sizes)


def _gaussian_mixture(spec: GeneratorSpec, rng: np.random.Generator):
    points, labels = make_blobs(n_samples=list(spec.sizes), n_features=int(spec.params['dimension']),
                                cluster_std=spec.noise, shuffle=False,
                                random_state=stream_seed(spec.seed, 'generate:gaussian_mixture'))
    return points.T, labels


def _hierarchy(spec: GeneratorSpec, rng: np.random.Generator):
    spread, separation = spec.params['spread'], spec.params['separation']
    centres = np.array([[0.0, 0.0], [spread, 0.0], [spread / 2, spread * np.sqrt(3) / 2],
                        [separation, 0.0], [separation + spread, 0.0]]).T
    # a regular pentagon of radius 0.5 per cluster
    angles = 2 * np.pi * np.arange(5) / 5
    pentagon = 0.5 * np.stack([np.cos(angles), np.sin(angles)])
    points = np.concatenate([centres[:, [k]] + pentagon for k in range(5)], axis=1)
    if spec.noise > 0:
        points = points + spec.noise * rng.standard_normal(points.shape)
    return points, _labels(spec.sizes)


def _ball(rng: np.random.Generator, count: int, dimension: int) -> np.ndarray:
    directions = rng.standard_normal((dimension, count))
    directions /= np.linalg.norm(directions, axis=0)
    return directions * rng.random(count) ** (1.0 / dimension)


def _two_balls(spec: GeneratorSpec, rng: np.random.Generator):
    dimension = int(spec.params['dimension'])
    if spec.params['separation'] <= 1:
        raise InvalidArgument('Unit balls at +-r e_1 overlap unless r > 1')
    centre = np.zeros((dimension, 1))
    centre[0] = spec.params['separation']
    points = np.concatenate([centre + _ball(rng, spec.sizes[0], dimension),
                             -centre + _ball(rng, spec.sizes[1], dimension)], axis=1)
    return points, _labels(spec.sizes)


class GeneratorFactory:
    def __init__(self, spec: GeneratorSpec):
        self.__spec = spec

    @property
    def spec(self) -> GeneratorSpec:
        return self.__spec

    def obtain_generator(self):
        generators = {
            'half_moons': _half_moons,
            'star_shaped': _star_shaped,
            'two_cubes': _two_cubes,
            'gaussian_mixture': _gaussian_mixture,
            'hierarchy_5x5': _hierarchy,
            'two_balls': _two_balls,
        }
        try:
            return generators[self.__spec.kind]
        except KeyError:
            raise InvalidArgument('Generator %s not found in GeneratorFactory' % self.__spec.kind)


def generate(spec: GeneratorSpec) -> Tuple[DataMatrix, np.ndarray]:
    """
    :param spec: GeneratorSpec
    :return: (DataMatrix, generating component of every observation)
    """
    rng = named_stream(spec.seed, 'generate:%s' % spec.kind)
    points, labels = GeneratorFactory(spec).obtain_generator()(spec, rng)
    return DataMatrix(points), np.asarray(labels, dtype=np.int64)


def meta_labels(labels) -> np.ndarray:
    """
    Super-cluster of every hierarchy_5x5 observation
    """
    return np.asarray(HIERARCHY_META)[np.asarray(labels)]

import json
import os
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from django.test import TestCase

from clustering.exceptions import InvalidArgument, ParseError
from clustering.exports import labels_frame, path_frame, render_json, write_dendrogram, write_labels_csv, \
    write_manifest, write_path_csv, write_selection
from clustering.generators import DEFAULT_SIZES, GENERATOR_KINDS, GeneratorSpec, generate, meta_labels
from clustering.path import GridSpec, compute_path, extract_dendrogram
from clustering.problem import DataMatrix, WeightGraph
from clustering.readers import load_config, load_csv, load_labels, write_csv
from clustering.selection import ebic_select
from clustering.streams import named_stream, stream_seed


def write_text(directory: str, name: str, text: str) -> str:
    path = os.path.join(directory, name)
    with open(path, 'w') as file:
        file.write(text)
    return path


def two_point_path():
    data = DataMatrix([[0.0, 4.0]])
    return compute_path(data, WeightGraph(2, [(0, 1, 1.0)]), GridSpec(gammas=[1.0, 3.0]))


class TestCsv(TestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.directory.cleanup()

    def test_rows_are_observations(self):
        data = load_csv(write_text(self.directory.name, 'x.csv', '1,2\n3,4\n5,6\n'))
        np.testing.assert_array_equal(data.values, [[1, 3, 5], [2, 4, 6]])
        self.assertFalse(data.has_missing)

    def test_columns_are_observations(self):
        data = load_csv(write_text(self.directory.name, 'x.csv', '1,2\n3,4\n5,6\n'), columns_are_observations=True)
        self.assertEqual((data.p, data.n), (3, 2))

    def test_header_skipped(self):
        data = load_csv(write_text(self.directory.name, 'x.csv', 'x,y\n1,2\n3,4\n'))
        np.testing.assert_array_equal(data.values, [[1, 3], [2, 4]])

    def test_empty_cell_is_missing(self):
        data = load_csv(write_text(self.directory.name, 'x.csv', '1,\n3,4\n'))
        np.testing.assert_array_equal(data.mask, [[True, True], [False, True]])

    def test_ragged_row(self):
        with self.assertRaises(ParseError) as context:
            load_csv(write_text(self.directory.name, 'x.csv', '1,2\n3\n5,6\n'))
        self.assertEqual(context.exception.line, 2)

    def test_non_numeric_cell(self):
        with self.assertRaises(ParseError) as context:
            load_csv(write_text(self.directory.name, 'x.csv', '1,2\n3,4\n5,x\n'))
        self.assertEqual(context.exception.line, 3)

    def test_empty_file(self):
        with self.assertRaises(ParseError):
            load_csv(write_text(self.directory.name, 'x.csv', '\n\n'))

    def test_values_read_back_exactly(self):
        rng = np.random.default_rng(3)
        values = rng.standard_normal((3, 7)) * 10.0 ** rng.integers(-5, 5, size=(3, 7))
        mask = np.ones((3, 7), dtype=bool)
        mask[1, 2] = mask[0, 5] = False
        path = os.path.join(self.directory.name, 'x.csv')
        write_csv(DataMatrix(values, mask), path)
        data = load_csv(path)
        np.testing.assert_array_equal(data.mask, mask)
        np.testing.assert_array_equal(data.values[mask], values[mask])

    def test_labels(self):
        path = write_text(self.directory.name, 'labels.csv', '0\n1\n1\n')
        np.testing.assert_array_equal(load_labels(path), [0, 1, 1])
        path = write_text(self.directory.name, 'path.csv', 'gamma,node,cluster\n0.5,0,0\n0.5,1,1\n')
        np.testing.assert_array_equal(load_labels(path), [0, 1])
        with self.assertRaises(ParseError):
            load_labels(write_text(self.directory.name, 'bad.csv', '0\n1.5\n'))


class TestConfig(TestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.directory.cleanup()

    def test_flag_names(self):
        path = write_text(self.directory.name, 'run.yaml', 'mode: fit\nmax-iter: 50\ngamma-grid: [0.1, 1]\n')
        self.assertEqual(load_config(path), {'mode': 'fit', 'max_iter': 50, 'gamma_grid': [0.1, 1]})

    def test_empty(self):
        self.assertEqual(load_config(write_text(self.directory.name, 'run.yaml', '')), {})

    def test_not_a_mapping(self):
        with self.assertRaises(InvalidArgument):
            load_config(write_text(self.directory.name, 'run.yaml', '- fit\n- path\n'))

    def test_invalid_yaml(self):
        with self.assertRaises(ParseError):
            load_config(write_text(self.directory.name, 'run.yaml', 'mode: [fit\n'))


class TestGenerators(TestCase):
    def test_half_moons(self):
        data, labels = generate(GeneratorSpec('half_moons'))
        self.assertEqual((data.p, data.n), (2, 40))
        self.assertEqual(sorted(set(labels)), [0, 1])

    def test_hierarchy(self):
        data, labels = generate(GeneratorSpec('hierarchy_5x5'))
        self.assertEqual(data.n, 25)
        self.assertEqual(sorted(set(labels)), [0, 1, 2, 3, 4])
        np.testing.assert_array_equal(meta_labels([0, 2, 3, 4]), [0, 0, 1, 1])

    def test_noiseless_stars_stay_on_support(self):
        data, labels = generate(GeneratorSpec('star_shaped', sizes=(10, 10, 10)))
        centres = np.array([[0.0, 4.0, 8.0], [0.0, 0.0, 0.0]])[:, labels]
        distances = np.linalg.norm(data.values - centres, axis=0)
        self.assertTrue(np.all(distances <= 1.0 + 1e-12))

    def test_two_cubes(self):
        data, labels = generate(GeneratorSpec('two_cubes', seed=2))
        self.assertEqual(data.n, 20)
        self.assertLess(data.values[0, labels == 0].max(), data.values[0, labels == 1].min())

    def test_seeded(self):
        first, _ = generate(GeneratorSpec('gaussian_mixture', seed=7))
        second, _ = generate(GeneratorSpec('gaussian_mixture', seed=7))
        third, _ = generate(GeneratorSpec('gaussian_mixture', seed=8))
        np.testing.assert_array_equal(first.values, second.values)
        self.assertFalse(np.array_equal(first.values, third.values))

    def test_every_kind_sizes_and_seeds(self):
        custom = {'half_moons': (7, 4), 'star_shaped': (6, 5, 4), 'two_cubes': (3, 8),
                  'gaussian_mixture': (9, 2, 5), 'two_balls': (4, 6)}
        for kind in GENERATOR_KINDS:
            for sizes in filter(None, (DEFAULT_SIZES[kind], custom.get(kind))):
                first, labels = generate(GeneratorSpec(kind, sizes=sizes, seed=5))
                again, same_labels = generate(GeneratorSpec(kind, sizes=sizes, seed=5))
                _, other_labels = generate(GeneratorSpec(kind, sizes=sizes, seed=6))
                self.assertEqual(first.n, sum(sizes), kind)
                np.testing.assert_array_equal(np.bincount(labels, minlength=len(sizes)), sizes)
                np.testing.assert_array_equal(np.bincount(other_labels, minlength=len(sizes)), sizes)
                np.testing.assert_array_equal(first.values, again.values)
                np.testing.assert_array_equal(labels, same_labels)

    def test_parse(self):
        spec = GeneratorSpec.parse('half_moons:sizes=30x10,noise=0.1', seed=4)
        self.assertEqual((spec.sizes, spec.noise, spec.seed), ((30, 10), 0.1, 4))
        self.assertEqual(GeneratorSpec.parse(spec.describe(), seed=4), spec)
        self.assertEqual(GeneratorSpec.parse('star_shaped:arms=4').params['arms'], 4)

    def test_parse_errors(self):
        for text in ('ring', 'half_moons:sizes=3', 'half_moons:noise', 'half_moons:noise=-1',
                     'star_shaped:sizes=1x2', 'half_moons:radius=2', 'hierarchy_5x5:sizes=2x2x2x2x2'):
            with self.assertRaises(InvalidArgument):
                GeneratorSpec.parse(text)


class TestStreams(TestCase):
    def test_named_streams(self):
        self.assertEqual(named_stream(5, 'holdout').random(), named_stream(5, 'holdout').random())
        self.assertNotEqual(named_stream(5, 'holdout').random(), named_stream(5, 'baseline').random())
        self.assertNotEqual(named_stream(5, 'holdout').random(), named_stream(6, 'holdout').random())

    def test_seed_range(self):
        for seed in (-1, 2 ** 64, None):
            with self.assertRaises(InvalidArgument):
                named_stream(seed, 'holdout')
        self.assertTrue(0 <= stream_seed(2 ** 64 - 1, 'kmeans') < 2 ** 31)


class TestExports(TestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.out = Path(self.directory.name)

    def tearDown(self):
        self.directory.cleanup()

    def test_frames(self):
        path = two_point_path()
        frame = path_frame(path)
        self.assertEqual(list(frame.columns), ['gamma', 'node', 'dim', 'value'])
        self.assertEqual(len(frame), 4)
        np.testing.assert_allclose(frame['value'], [1.0, 3.0, 2.0, 2.0], atol=1e-6)
        labels = labels_frame(path)
        self.assertEqual(labels['cluster'].tolist(), [0, 1, 0, 0])

    def test_path_csv_exact(self):
        path = two_point_path()
        write_path_csv(path, self.out / 'path.csv')
        write_labels_csv(path, self.out / 'labels.csv')
        frame = pd.read_csv(self.out / 'path.csv', float_precision='round_trip')
        np.testing.assert_array_equal(frame['value'], path_frame(path)['value'])
        np.testing.assert_array_equal(load_labels(self.out / 'labels.csv'), [0, 1, 0, 0])

    def test_dendrogram_files(self):
        write_dendrogram(extract_dendrogram(two_point_path()), self.out / 'tree.json', self.out / 'tree.nwk')
        self.assertEqual((self.out / 'tree.nwk').read_text(), '(0:3,1:3);\n')
        self.assertEqual(json.loads((self.out / 'tree.json').read_text())['height'], 3.0)

    def test_selection_files(self):
        report = ebic_select(two_point_path(), max_clusters=2)
        write_selection(report, self.out / 'ebic.csv', self.out / 'ebic.json')
        self.assertEqual(list(pd.read_csv(self.out / 'ebic.csv').columns), ['gamma', 'score', 'K'])
        written = json.loads((self.out / 'ebic.json').read_text())
        self.assertEqual(written['criterion'], 'ebic')
        self.assertEqual(len(written['scores']), 2)

    def test_strict_json(self):
        with self.assertRaises(ValueError):
            render_json({'score': float('nan')})
        self.assertEqual(json.loads(render_json({'K': np.int64(3), 'flags': np.array([True])})),
                         {'K': 3, 'flags': [True]})

    def test_manifest_reproducible(self):
        artifacts = [self.out / 'path.csv', self.out / 'labels.csv']
        first = write_manifest({'mode': 'path', 'seed': 3}, artifacts, self.out / 'a.json').read_bytes()
        second = write_manifest({'mode': 'path', 'seed': 3}, artifacts, self.out / 'b.json').read_bytes()
        self.assertEqual(first, second)
        manifest = json.loads(first)
        self.assertEqual(manifest['seed'], 3)
        self.assertEqual(manifest['artifacts'], ['labels.csv', 'path.csv'])
        self.assertIn('numpy', manifest['versions'])

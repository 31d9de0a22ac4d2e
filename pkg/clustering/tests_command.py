import json
import os
import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import CommandError, call_command
from django.test import TestCase


def soncluster(mode: str, **options) -> str:
    stdout = StringIO()
    call_command('soncluster', mode, stdout=stdout, **options)
    return stdout.getvalue()


def file_bytes(directory: Path) -> dict:
    return {path.name: path.read_bytes() for path in sorted(directory.iterdir())}


class TestCommand(TestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.out = Path(self.directory.name) / 'run'

    def tearDown(self):
        self.directory.cleanup()

    def test_fit_artifacts(self):
        output = soncluster('fit', generate='half_moons', gamma='geom:8', out=str(self.out))
        self.assertIn('Wrote 4 artifacts', output)
        self.assertEqual(sorted(os.listdir(self.out)), ['diagnostics.json', 'labels.csv', 'manifest.json', 'path.csv'])
        diagnostics = json.loads((self.out / 'diagnostics.json').read_text())
        self.assertEqual(len(diagnostics), 8)
        self.assertTrue(all('optimal' in entry and 'gap' in entry for entry in diagnostics))

    def test_rerun_is_byte_identical(self):
        soncluster('path', generate='half_moons', gamma='geom:10', seed=3, out=str(self.out))
        first = file_bytes(self.out)
        soncluster('path', generate='half_moons', gamma='geom:10', seed=3, out=str(self.out))
        self.assertEqual(file_bytes(self.out), first)
        self.assertIn('dendrogram.nwk', first)

    def test_select(self):
        soncluster('select', generate='gaussian_mixture:sizes=10x10x10', gamma='geom:15', out=str(self.out))
        summary = json.loads((self.out / 'summary.json').read_text())
        self.assertEqual(summary['criterion'], 'ebic')
        self.assertIn('kmeans', summary['baselines'])
        self.assertLessEqual(summary['adjusted_rand_index'], 1.0)

    def test_select_with_cluster_cap(self):
        soncluster('select', generate='gaussian_mixture:sizes=10x10x10', gamma='geom:15', max_clusters=2,
                   out=str(self.out))
        self.assertLessEqual(json.loads((self.out / 'summary.json').read_text())['chosen_K'], 2)
        scores = json.loads((self.out / 'selection.json').read_text())['scores']
        self.assertFalse(all(row['eligible'] for row in scores))

    def test_theory(self):
        soncluster('theory', generate='two_cubes', trials=2, out=str(self.out))
        report = json.loads((self.out / 'theory.json').read_text())
        families = [interval['family'] for interval in report['intervals']]
        self.assertEqual(families, ['panahi_uniform', 'sun_weighted', 'zhu_two_cubes'])

    def test_csv_input(self):
        source = Path(self.directory.name) / 'x.csv'
        source.write_text('x,y\n0,0\n0,1\n10,0\n10,1\n')
        soncluster('path', input=str(source), gamma='0.1,100', out=str(self.out))
        self.assertTrue((self.out / 'dendrogram.json').exists())

    def test_parse_error_reported_as_json(self):
        source = Path(self.directory.name) / 'x.csv'
        source.write_text('0,0\n0\n')
        with self.assertRaises(CommandError) as context:
            soncluster('path', input=str(source), out=str(self.out))
        message = json.loads(str(context.exception))
        self.assertEqual(message['error'], 'ParseError')
        self.assertEqual(message['line'], 2)

    def test_missing_file(self):
        with self.assertRaises(CommandError) as context:
            soncluster('fit', input=os.path.join(self.directory.name, 'absent.csv'), out=str(self.out))
        self.assertEqual(json.loads(str(context.exception))['error'], 'FileNotFoundError')

    def test_needs_exactly_one_source(self):
        with self.assertRaises(CommandError) as context:
            soncluster('fit', out=str(self.out))
        self.assertEqual(json.loads(str(context.exception))['error'], 'InvalidArgument')

    def test_yaml_config(self):
        config = Path(self.directory.name) / 'run.yaml'
        config.write_text('generate: half_moons:sizes=10x10\ngamma: "0.01,0.1"\npath-mode: exact\n')
        soncluster('path', config=str(config), out=str(self.out))
        manifest = json.loads((self.out / 'manifest.json').read_text())
        self.assertEqual(manifest['config']['generate'], 'half_moons:sizes=10x10')
        self.assertEqual(manifest['config']['gamma'], '0.01,0.1')

    def test_flags_override_config(self):
        config = Path(self.directory.name) / 'run.yaml'
        config.write_text('generate: half_moons:sizes=10x10\ngamma: "0.01"\nseed: 1\n')
        soncluster('path', config=str(config), seed=9, out=str(self.out))
        self.assertEqual(json.loads((self.out / 'manifest.json').read_text())['seed'], 9)

    def test_unknown_config_key(self):
        config = Path(self.directory.name) / 'run.yaml'
        config.write_text('generate: half_moons\ncolour: red\n')
        with self.assertRaises(CommandError) as context:
            soncluster('path', config=str(config), out=str(self.out))
        self.assertIn('colour', json.loads(str(context.exception))['message'])

import json
from io import StringIO
from pathlib import Path
from tempfile import TemporaryDirectory

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from apps.control.constants import EXIT_SOLVER_ERROR, EXIT_VERDICT_FAILED


class OcpCommandTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, data, name='run.json'):
        path = self.dir / name
        path.write_text(json.dumps(data, indent=2))
        return str(path)

    def ocp(self, task, config, out):
        stdout = StringIO()
        call_command('ocp', task, config=config, out=str(self.dir / out), stdout=stdout)
        return stdout.getvalue()

    def read(self, out, name):
        return json.loads((self.dir / out / name).read_text())

    def test_solve_state(self):
        """Test that solve-state writes the state, the report and the manifest"""
        config = self.write({'grid': {'nx': 9}, 'controls': {'u': 2.0, 'v': 2.0}})
        output = self.ocp('solve-state', config, 'state')
        self.assertIn('all verdicts passed', output)
        report = self.read('state', 'report.json')
        self.assertTrue(report['passed'])
        self.assertAlmostEqual(report['state']['min'], 2.0, places=8)
        manifest = self.read('state', 'manifest.json')
        self.assertEqual(manifest['exit_code'], 0)
        self.assertIn('y.csv', manifest['artifacts'])
        self.assertTrue((self.dir / 'state' / 'y.csv').is_file())

    def test_verify_at_bound_pair(self):
        """Test that verify passes at the optimal bound pair"""
        config = self.write({'grid': {'nx': 9}, 'problem': {'benchmark': 'bound_optimal'}, 'verify': {'n_probes': 10}})
        self.ocp('verify', config, 'verify')
        report = self.read('verify', 'report.json')
        self.assertTrue(all(report['verdicts'].values()))
        self.assertIn('bound_case', report['verdicts'])

    def test_verify_failure_exit_code(self):
        """Test that a non-stationary control ends with the verdict-failure code"""
        config = self.write({
            'grid': {'nx': 9},
            'problem': {'benchmark': 'unconstrained_smooth'},
            'controls': {'u': 1.0, 'v': 0.0},
            'verify': {'n_probes': 5},
        })
        with self.assertRaises(CommandError) as ctx:
            self.ocp('verify', config, 'bad')
        self.assertEqual(ctx.exception.returncode, EXIT_VERDICT_FAILED)
        self.assertIn('b_stationary', str(ctx.exception))
        self.assertEqual(self.read('bad', 'manifest.json')['exit_code'], EXIT_VERDICT_FAILED)

    def test_limit_tasks_on_kink_edge(self):
        """Test that both limit tasks pass their pairwise verdicts on the minus side of the linear-edge benchmark"""
        base = {'grid': {'nx': 17}, 'problem': {'benchmark': 'kink_edge'}}
        config = self.write({**base, 'task': 'bouligand-limit', 'limit': {'side': 'minus', 'n_probes': 2}}, 'bouligand.json')
        self.ocp('bouligand-limit', config, 'bouligand')
        report = self.read('bouligand', 'report.json')
        self.assertTrue(report['verdicts']['minus_decreasing'])
        config = self.write({**base, 'task': 'wset-limit', 'limit': {'side': 'minus', 'sigma': 1.0}}, 'wset.json')
        self.ocp('wset-limit', config, 'wset')
        report = self.read('wset', 'report.json')
        self.assertTrue(report['verdicts']['minus_decreasing'])
        self.assertLessEqual(report['sides']['minus']['final_error'], 1e-3)

    def test_config_error_exit_code(self):
        """Test that an invalid config ends with the error code and writes nothing"""
        config = self.write({'problem': {'kappa_gamma': -1}})
        with self.assertRaises(CommandError) as ctx:
            self.ocp('solve-state', config, 'invalid')
        self.assertEqual(ctx.exception.returncode, EXIT_SOLVER_ERROR)
        self.assertIn('problem.kappa_gamma', str(ctx.exception))
        self.assertFalse((self.dir / 'invalid').exists())

    def test_reports_are_reproducible(self):
        """Test that equal configs and seeds give byte-identical reports"""
        config = self.write({
            'grid': {'nx': 9},
            'problem': {'benchmark': 'unconstrained_smooth'},
            'optimizer': {'max_iters': 5},
            'seed': 3,
        })
        for out in ('first', 'second'):
            try:
                self.ocp('optimize', config, out)
            except CommandError as exc:
                self.assertEqual(exc.returncode, EXIT_VERDICT_FAILED)
        first = (self.dir / 'first' / 'report.json').read_bytes()
        self.assertEqual(first, (self.dir / 'second' / 'report.json').read_bytes())
        self.assertEqual(
            (self.dir / 'first' / 'u.csv').read_bytes(), (self.dir / 'second' / 'u.csv').read_bytes()
        )

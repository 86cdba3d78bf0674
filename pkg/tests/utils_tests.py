"""
Tests for utils module
"""
import datetime
import logging
import os
import tempfile
from unittest import TestCase, mock

from svnet import exceptions, utils


class UtilsGetArgsTestCase(TestCase):
    received = {'a': 1, 'b': 'c'}
    required = {'a': int}
    defaultable = {'a': 3, 'c': 2}
    optional = {'a': int, 'b': str}
    constant = {'a': 2}

    def test_get_args_missing_args(self):
        self.assertRaises(exceptions.AppException, utils.get_args, self.received)

    def test_get_args_missing_required_keys(self):
        required_missing = {'q': str}
        self.assertRaises(exceptions.AppException, utils.get_args, self.received,
                          required=required_missing)

    def test_get_args_required(self):
        expected = {'a': 1}
        self.assertDictEqual(utils.get_args(self.received,
                                            required=self.required), expected)

    def test_get_args_defaultable(self):
        expected = {'a': 1, 'c': 2}
        self.assertDictEqual(utils.get_args(self.received,
                                            defaultable=self.defaultable), expected)

    def test_get_args_optional(self):
        expected = {'a': 1, 'b': 'c'}
        self.assertDictEqual(utils.get_args(self.received,
                                            optional=self.optional), expected)

    def test_get_args_constant(self):
        expected = {'a': 2}
        self.assertDictEqual(utils.get_args(self.received,
                                            constant=self.constant), expected)

    def test_get_args_all(self):
        expected = {'a': 2, 'c': 2, 'b': 'c'}
        self.assertDictEqual(utils.get_args(self.received,
                                            required=self.required,
                                            defaultable=self.defaultable,
                                            optional=self.optional,
                                            constant=self.constant), expected)


class ParseValueTestCase(TestCase):
    def test_dates_and_times(self):
        self.assertEqual(utils.parse_value('2024-01-02', datetime.date),
                         datetime.date(2024, 1, 2))
        self.assertEqual(utils.parse_value('09:30', datetime.time), datetime.time(9, 30))
        self.assertIsNone(utils.parse_value('noon-ish', datetime.time))

    def test_numbers(self):
        self.assertEqual(utils.parse_value(1, float), 1.0)
        self.assertIsInstance(utils.parse_value(1, float), float)
        self.assertIsNone(utils.parse_value(True, int))
        self.assertIsNone(utils.parse_value('1', int))


class ConfigTestCase(TestCase):
    def test_merge_config(self):
        base = {'sweep': {'rho0': 0.01, 'seed': 0}, 'session': {'timezone': 'UTC'}}
        merged = utils.merge_config(base, {'sweep': {'seed': 3}, 'extra': 1})
        self.assertEqual(merged, {'sweep': {'rho0': 0.01, 'seed': 3},
                                  'session': {'timezone': 'UTC'}, 'extra': 1})
        self.assertEqual(base['sweep']['seed'], 0)

    def test_config_hash(self):
        self.assertEqual(utils.config_hash({'a': 1, 'b': [1, 2]}),
                         utils.config_hash({'b': (1, 2), 'a': 1}))
        self.assertNotEqual(utils.config_hash({'a': 1}), utils.config_hash({'a': 2}))
        self.assertEqual(len(utils.config_hash({})), 64)

    def test_env_threads(self):
        with mock.patch.dict(os.environ, {'SVNET_THREADS': '4'}):
            self.assertEqual(utils.env_threads(), 4)
        with mock.patch.dict(os.environ, {'SVNET_THREADS': '-1'}):
            self.assertEqual(utils.env_threads(), -1)
        for value in ('0', '-2', 'four'):
            with mock.patch.dict(os.environ, {'SVNET_THREADS': value}):
                self.assertRaises(exceptions.ConfigException, utils.env_threads)
        with mock.patch.dict(os.environ, {}, clear=True):
            self.assertIsNone(utils.env_threads())

    def test_load_toml(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'bad.toml')
            with open(path, 'w') as f:
                f.write('[sweep\n')
            self.assertRaises(exceptions.ConfigException, utils.load_toml, path)
            self.assertRaises(exceptions.ConfigException, utils.load_toml,
                              os.path.join(tmp, 'missing.toml'))


class LoggingTestCase(TestCase):
    def test_level_from_environment(self):
        with mock.patch.dict(os.environ, {'SVNET_LOG_LEVEL': 'warning'}):
            logger = utils.init_logging()
        self.assertEqual(logger.level, logging.WARNING)
        self.assertEqual(len(logger.handlers), 1)

    def test_explicit_level_wins(self):
        with mock.patch.dict(os.environ, {'SVNET_LOG_LEVEL': 'ERROR'}):
            self.assertEqual(utils.init_logging(logging.DEBUG).level, logging.DEBUG)

    def test_unknown_level(self):
        with mock.patch.dict(os.environ, {'SVNET_LOG_LEVEL': 'chatty'}):
            self.assertEqual(utils.init_logging().level, logging.INFO)


class HandleExceptionTestCase(TestCase):
    def status(self, exception: BaseException) -> int:
        with self.assertLogs(utils.APP_NAME, level='ERROR'):
            return utils.handle_exception(exception)

    def test_usage(self):
        self.assertEqual(self.status(exceptions.UsageException('x')), utils.EXIT_USAGE)
        self.assertEqual(self.status(exceptions.ConfigException('x')), utils.EXIT_USAGE)

    def test_data(self):
        for ex in (exceptions.ParseException('x', line=3),
                   exceptions.InsufficientDataException('x'),
                   exceptions.IncompleteSweepException('x', ['a']),
                   exceptions.ValidationException('x')):
            with self.subTest(ex=type(ex).__name__):
                self.assertEqual(self.status(ex), utils.EXIT_DATA)

    def test_internal(self):
        self.assertEqual(self.status(ZeroDivisionError()), utils.EXIT_INTERNAL)
        self.assertEqual(self.status(exceptions.SweepTaskException('Window 0')),
                         utils.EXIT_INTERNAL)

    def test_task_failure_caused_by_data(self):
        try:
            try:
                raise exceptions.InsufficientDataException('no traders')
            except exceptions.InsufficientDataException as cause:
                raise exceptions.SweepTaskException('Window 0, dt=300') from cause
        except exceptions.SweepTaskException as ex:
            self.assertEqual(self.status(ex), utils.EXIT_DATA)


class ExceptionsTestCase(TestCase):
    def test_parse_line(self):
        ex = exceptions.ParseException('bad volume', line=4)
        self.assertEqual((str(ex), ex.line), ('line 4: bad volume', 4))

    def test_incomplete_sweep_lists_missing(self):
        ex = exceptions.IncompleteSweepException('Incomplete',
                                                 [f'c{i}' for i in range(25)])
        self.assertTrue(str(ex).endswith('c19 (+5 more)'))
        self.assertEqual(len(ex.missing), 25)

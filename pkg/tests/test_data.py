import numpy as np
from pytest import fixture, raises

from smoothgam.data import Column, Dataset, Schema, encode_factor, load_csv, write_csv
from smoothgam.errors import DataIOError, DataParseError, SchemaError, ValidationError


@fixture
def csv_file(tmp_path):
    def make(text, name='data.csv'):
        path = tmp_path / name
        path.write_text(text, encoding='utf-8')
        return path

    return make


class TestEncodeFactor:
    def test_first_appearance_order(self):
        codes, levels = encode_factor(['b', 'a', 'b', 'c'])
        assert levels == ('b', 'a', 'c')
        assert codes.tolist() == [0, 1, 0, 2]

    def test_explicit_order(self):
        codes, levels = encode_factor(['b', 'a'], ['a', 'b', 'c'])
        assert levels == ('a', 'b', 'c')
        assert codes.tolist() == [1, 0]

    def test_unknown_level(self):
        with raises(SchemaError) as e:
            encode_factor(['a', 'z'], ['a', 'b'])
        assert e.value.row == 1

    def test_duplicate_levels(self):
        with raises(SchemaError):
            encode_factor(['a'], ['a', 'a'])


class TestSchema:
    def test_builders_do_not_mutate(self):
        base = Schema()
        derived = base.with_response('y').with_weights('n').with_factor('g', ['x', 'y']).with_numeric('t')
        assert base.response is None and base.factors == {}
        assert derived.declared == ['y', 'n', 'g', 't']

    def test_dict_round_trip(self):
        schema = Schema().with_response('y').with_factor('g', ['b', 'a']).with_factor('h')
        assert Schema.from_dict(schema.to_dict()) == schema

    def test_factor_list_shorthand(self):
        assert Schema.from_dict({'factors': ['g']}).factors == {'g': None}

    def test_unknown_keys(self):
        with raises(SchemaError):
            Schema.from_dict({'respones': 'y'})

    def test_from_json_missing(self, tmp_path):
        with raises(DataIOError):
            Schema.from_json(tmp_path / 'absent.json')


class TestDataset:
    def test_from_columns(self):
        ds = Dataset.from_columns({'x': [1, 2, 3], 'g': ['a', 'b', 'a'], 'y': [0.5, 1.5, 2.5]},
                                  response='y', factors=['g'])
        assert ds.n_rows == 3
        assert ds.factor('g').levels == ('a', 'b')
        assert ds.y.tolist() == [0.5, 1.5, 2.5]
        assert ds.weights.tolist() == [1.0, 1.0, 1.0]

    def test_columns_are_read_only(self):
        ds = Dataset.from_columns({'x': [1.0, 2.0]})
        with raises(ValueError):
            ds.numeric('x')[0] = 5.0

    def test_differing_lengths(self):
        with raises(ValidationError):
            Dataset.from_columns({'x': [1, 2], 'y': [1, 2, 3]})

    def test_non_finite_response(self):
        with raises(ValidationError) as e:
            Dataset.from_columns({'y': [1.0, np.nan]}, response='y')
        assert e.value.row == 1
        assert e.value.column == 'y'

    def test_non_positive_weights(self):
        with raises(ValidationError):
            Dataset.from_columns({'y': [1.0, 2.0], 'w': [1.0, 0.0]}, response='y', weights='w')

    def test_factor_response(self):
        with raises(SchemaError):
            Dataset.from_columns({'y': ['a', 'b']}, response='y', factors=['y'])

    def test_kind_accessors(self):
        ds = Dataset.from_columns({'x': [1.0], 'g': ['a']}, factors=['g'])
        with raises(SchemaError):
            ds.numeric('g')
        with raises(SchemaError):
            ds.factor('x')
        with raises(SchemaError):
            ds.column('nope')
        with raises(SchemaError):
            ds.y

    def test_subset_keeps_levels(self):
        ds = Dataset.from_columns({'g': ['a', 'b', 'c']}, factors=['g'])
        sub = ds.subset(np.array([False, True, False]))
        assert sub.n_rows == 1
        assert sub.factor('g').levels == ('a', 'b', 'c')
        assert sub.factor('g').labels == ['b']

    def test_fingerprint_tracks_content(self):
        first = Dataset.from_columns({'x': [1.0, 2.0]})
        assert first.fingerprint() == Dataset.from_columns({'x': [1.0, 2.0]}).fingerprint()
        assert first.fingerprint()['sha256'] != Dataset.from_columns({'x': [1.0, 2.5]}).fingerprint()['sha256']
        assert first.fingerprint()['n_rows'] == 2


class TestLoadCsv:
    def test_inference(self, csv_file):
        path = csv_file('week,cow,fat\n1,A,3.5\n2,B,3.25\n3,A,3.0\n')
        ds = load_csv(path, Schema(response='fat'))
        assert ds.numeric('week').tolist() == [1.0, 2.0, 3.0]
        assert ds.factor('cow').levels == ('A', 'B')
        assert ds.y.tolist() == [3.5, 3.25, 3.0]

    def test_declared_level_order(self, csv_file):
        path = csv_file('treat,y\nT4,1\nControl,2\n')
        ds = load_csv(path, Schema(response='y').with_factor('treat', ['Control', 'T4', 'T3']))
        assert ds.factor('treat').levels == ('Control', 'T4', 'T3')
        assert ds.factor('treat').values.tolist() == [1, 0]

    def test_numeric_looking_factor(self, csv_file):
        ds = load_csv(csv_file('block,y\n1,1\n2,2\n1,3\n'), Schema(response='y').with_factor('block'))
        assert ds.factor('block').levels == ('1', '2')

    def test_parse_error_names_row(self, csv_file):
        with raises(DataParseError) as e:
            load_csv(csv_file('x,y\n1,1\n2,oops\n'), Schema(response='y'))
        assert e.value.row == 1
        assert e.value.column == 'y'

    def test_missing_value(self, csv_file):
        with raises(ValidationError) as e:
            load_csv(csv_file('x,y\n1,1\n,2\n'), Schema(response='y'))
        assert e.value.row == 1

    def test_missing_declared_column(self, csv_file):
        with raises(SchemaError) as e:
            load_csv(csv_file('x,y\n1,1\n'), Schema(response='fat'))
        assert e.value.column == 'fat'

    def test_missing_file(self, tmp_path):
        with raises(DataIOError) as e:
            load_csv(tmp_path / 'absent.csv')
        assert e.value.prefix == 'ERROR:data_model:io:'

    def test_write_round_trip(self, tmp_path):
        x = np.random.default_rng(3).uniform(size=20)
        ds = Dataset.from_columns({'x': x, 'g': ['b', 'a'] * 10, 'y': np.sin(x)}, response='y',
                                  factors={'g': ['a', 'b']})
        path = tmp_path / 'out.csv'
        write_csv(ds, path)
        again = load_csv(path, ds.schema)
        assert again.equals(ds)
        assert again.fingerprint() == ds.fingerprint()

    def test_column_equals(self):
        assert Column.factor(['a', 'b']).equals(Column.factor(['a', 'b']))
        assert not Column.factor(['a', 'b']).equals(Column.factor(['a', 'b'], ['b', 'a']))

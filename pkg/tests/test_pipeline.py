"""
Unit-тесты для модуля pipeline.
"""

import json

import numpy as np
import pytest

from app.config import build_run_config
from app.errors import StageError
from app.services.edit_engine import read_masks_csv
from app.services.feature_store import read_dataset
from app.services.pipeline import DROPS_HEADER, export_drops, run_pipeline
from app.services.util import sha256_file
from app.types import EditMask


def _config(files, out, **extra):
    values = {key: str(files[key]) for key in ('train', 'test', 'train_gt', 'test_gt', 'roles')}
    values['output'] = str(out)
    values.update(extra)
    return build_run_config(values, seed=0)


def _status(report):
    return {s['name']: s['status'] for s in report['stages']}


class TestRunPipeline:
    """Тесты для функции run_pipeline."""

    def test_merged_variant(self, synth_files, tmp_path):
        out = tmp_path / 'run'
        report = run_pipeline(_config(synth_files, out))

        assert report['variant'] == 'merged'
        assert all(status == 'done' for status in _status(report).values())
        for name in ('stats.csv', 'masks.csv', 'drops.csv', 'train_edited.feat', 'predictions.csv',
                     'detections.csv', 'detections_nms.csv', 'eval.csv', 'report.json', 'report.md',
                     'manifest.json', 'pr_class0.csv'):
            assert (out / name).exists(), name
        assert (out / 'models').is_dir()
        assert not (out / '.feat_edit.lock').exists()
        assert (out / 'logs' / 'pipeline.jsonl').exists()

        masks = read_masks_csv(out / 'masks.csv')
        assert [m.class_id for m in masks] == [0, 1, 2]
        assert all(len(m.dropped_intra) == 6 and len(m.dropped_inter) == 9 for m in masks)

        train = read_dataset(synth_files['train'])
        classes = {row['class_id']: row for row in report['classes']}
        assert classes[0]['training_samples'] == 2 * len(train)
        assert 0.0 <= report['mean_ap'] <= 1.0
        assert 0.0 <= report['accuracy'] <= 1.0
        assert set(report['recovery']) == {'noisy_recall', 'flat_recall', 'friendly_dropped'}

    def test_manifest_checksums(self, synth_files, tmp_path):
        out = tmp_path / 'run'
        cfg = _config(synth_files, out)
        run_pipeline(cfg)
        manifest = json.loads((out / 'manifest.json').read_text(encoding='utf-8'))

        assert manifest['seeds'] == {'run': 0, 'edit': 0, 'svm': 0}
        assert manifest['config']['variant'] == 'merged'
        assert manifest['inputs']['train']['sha256'] == sha256_file(synth_files['train'])
        assert 'report.json' in manifest['files']
        for name, digest in manifest['files'].items():
            assert sha256_file(out / name) == digest
        assert set(manifest['stage_timings_ms']) >= {'load', 'train', 'ap'}

    def test_rerun_is_byte_identical(self, synth_files, tmp_path):
        out = tmp_path / 'run'
        cfg = _config(synth_files, out)
        run_pipeline(cfg)
        first = {name: (out / name).read_bytes() for name in ('report.json', 'report.md', 'masks.csv', 'eval.csv')}
        run_pipeline(cfg)
        for name, payload in first.items():
            assert (out / name).read_bytes() == payload, name

    def test_original_variant_skips_editing(self, synth_files, tmp_path):
        out = tmp_path / 'run'
        report = run_pipeline(_config(synth_files, out, variant='original'))
        status = _status(report)
        for name in ('stats', 'profile', 'masks', 'edit', 'merge'):
            assert status[name] == 'skipped'
        assert status['train'] == 'done'
        assert not (out / 'masks.csv').exists()
        assert report['recovery'] is None

    def test_random_edit_variant(self, synth_files, tmp_path):
        out = tmp_path / 'run'
        report = run_pipeline(_config(synth_files, out, variant='random_edit'))
        assert (out / 'train_random.feat').exists()
        assert _status(report)['merge'] == 'done'
        assert _status(report)['masks'] == 'skipped'

    def test_edited_only_variant(self, synth_files, tmp_path):
        out = tmp_path / 'run'
        report = run_pipeline(_config(synth_files, out, variant='edited_only'))
        assert _status(report)['merge'] == 'skipped'
        train = read_dataset(synth_files['train'])
        assert all(row['training_samples'] == len(train) for row in report['classes'])

    def test_bad_input_is_stage_error(self, synth_files, tmp_path):
        broken = tmp_path / 'broken.feat'
        broken.write_bytes(b'NOPE!' + synth_files['train'].read_bytes()[5:])
        files = dict(synth_files, train=broken)
        with pytest.raises(StageError) as info:
            run_pipeline(_config(files, tmp_path / 'run'))
        assert info.value.stage == 'load'
        assert info.value.exit_code == 3
        assert info.value.context['path'] == str(broken)
        assert not (tmp_path / 'run' / '.feat_edit.lock').exists()


class TestExportDrops:
    """Тесты для функции export_drops."""

    def test_rows_per_dropped_channel(self, synth_files, tmp_path):
        out = tmp_path / 'run'
        run_pipeline(_config(synth_files, out))
        masks = read_masks_csv(out / 'masks.csv')
        train = read_dataset(synth_files['train'])

        target = tmp_path / 'drops.csv'
        rows = export_drops(masks, train, target, k=3)
        lines = target.read_text(encoding='utf-8').splitlines()
        assert lines[0] == ','.join(DROPS_HEADER)
        assert rows == len(lines) - 1 == 3 * sum(len(m.dropped) for m in masks)
        first = lines[1].split(',')
        assert first[0] == '0'
        assert first[2] in ('intra', 'inter', 'both')

    def test_no_dropped_channels(self, make_dataset, tmp_path):
        d = make_dataset(0)
        target = tmp_path / 'drops.csv'
        assert export_drops([EditMask(0, np.ones(d.channels, dtype=bool))], d, target) == 0
        assert target.read_text(encoding='utf-8') == ','.join(DROPS_HEADER) + '\n'

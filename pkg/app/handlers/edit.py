"""
Подкоманды edit, rand-edit, merge и export-drops.
"""

import argparse

from ..config import EditConfig
from ..services.channel_stats import stats_matrix
from ..services.edit_engine import (
    build_masks, edit_dataset, merge_datasets, random_edit_dataset, read_masks_csv, variance_profile,
    write_masks_csv,
)
from ..services.feature_store import read_dataset, write_dataset
from ..services.pipeline import export_drops
from .common import add_seed, echo, locked_output, seed_of


def cmd_edit(args: argparse.Namespace) -> int:
    """Строит маски по классам (или читает готовые) и редактирует набор маской класса выборки."""
    dataset = read_dataset(args.data)
    with locked_output(args.out):
        if args.masks:
            masks = read_masks_csv(args.masks)
        else:
            cfg = EditConfig(intra_frac=args.intra_frac, inter_frac=args.inter_frac)
            profile = variance_profile(stats_matrix(dataset), dataset.class_ids, dataset.num_classes)
            masks = build_masks(profile, cfg)
            if args.masks_out:
                write_masks_csv(masks, args.masks_out)
        write_dataset(edit_dataset(dataset, masks), args.out)
    dropped = sum(len(m.dropped) for m in masks)
    echo(f"масок: {len(masks)}, отброшено каналов всего: {dropped} → {args.out}")
    return 0


def cmd_rand_edit(args: argparse.Namespace) -> int:
    """Случайно обнуляет позиции каждой карты признаков."""
    dataset = read_dataset(args.data)
    with locked_output(args.out):
        write_dataset(random_edit_dataset(dataset, args.ratio, seed_of(args)), args.out)
    echo(f"{len(dataset)} выборок → {args.out}")
    return 0


def cmd_merge(args: argparse.Namespace) -> int:
    """Конкатенация двух наборов одной геометрии."""
    merged = merge_datasets(read_dataset(args.a), read_dataset(args.b))
    with locked_output(args.out):
        write_dataset(merged, args.out)
    echo(f"{len(merged)} выборок → {args.out}")
    return 0


def cmd_export_drops(args: argparse.Namespace) -> int:
    """Отброшенные каналы с причиной и лучшими выборками по активации."""
    dataset = read_dataset(args.data)
    masks = read_masks_csv(args.masks)
    with locked_output(args.out):
        rows = export_drops(masks, dataset, args.out, args.k)
    echo(f"{rows} строк → {args.out}")
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser('edit', help='маски каналов по дисперсиям эксцесса и редактирование набора')
    parser.add_argument('--data', required=True, help='файл .feat')
    parser.add_argument('--out', required=True, help='редактированный .feat')
    parser.add_argument('--masks', default=None, help='готовые маски (masks.csv) вместо построения')
    parser.add_argument('--masks-out', default=None, help='куда записать построенные маски')
    parser.add_argument('--intra-frac', type=float, default=0.20, help='доля каналов, отбрасываемых по intra')
    parser.add_argument('--inter-frac', type=float, default=0.30, help='доля каналов, отбрасываемых по inter')
    parser.set_defaults(handler=cmd_edit)

    parser = subparsers.add_parser('rand-edit', help='случайное обнуление позиций карт признаков')
    parser.add_argument('--data', required=True, help='файл .feat')
    parser.add_argument('--out', required=True, help='редактированный .feat')
    parser.add_argument('--ratio', type=float, default=0.5, help='отношение нулей к единицам, [0, 1)')
    add_seed(parser)
    parser.set_defaults(handler=cmd_rand_edit)

    parser = subparsers.add_parser('merge', help='слияние двух наборов')
    parser.add_argument('--a', required=True, help='первый .feat')
    parser.add_argument('--b', required=True, help='второй .feat')
    parser.add_argument('--out', required=True, help='результат .feat')
    parser.set_defaults(handler=cmd_merge)

    parser = subparsers.add_parser('export-drops', help='отброшенные каналы и лучшие выборки по ним')
    parser.add_argument('--data', required=True, help='файл .feat')
    parser.add_argument('--masks', required=True, help='masks.csv')
    parser.add_argument('--out', required=True, help='CSV вывода')
    parser.add_argument('-k', type=int, default=9, help='выборок на канал')
    parser.set_defaults(handler=cmd_export_drops)

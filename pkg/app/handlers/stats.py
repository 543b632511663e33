"""
Подкоманды stats, pca и rank.
"""

import argparse

from ..services.channel_stats import (
    edited_path, pca_project, project, rank_channel_activations, stats_matrix, write_pca_csv, write_stats_csv,
)
from ..services.edit_engine import edit_dataset, read_masks_csv
from ..services.feature_store import read_dataset
from .common import echo, locked_output


def cmd_stats(args: argparse.Namespace) -> int:
    """Матрица эксцессов в CSV `sample_index,channel,kurtosis`."""
    dataset = read_dataset(args.data)
    with locked_output(args.out):
        stats = stats_matrix(dataset)
        write_stats_csv(stats, args.out)
    echo(f"{stats.shape[0]}×{stats.shape[1]} → {args.out}")
    return 0


def cmd_pca(args: argparse.Namespace) -> int:
    """
    Проекции на две главные компоненты; с --masks ещё и редактированные признаки
    в том же базисе (файл <имя>_edited.csv).
    """
    dataset = read_dataset(args.data)
    result = pca_project(dataset.flattened(), components=2)
    with locked_output(args.out):
        write_pca_csv(result.projections, dataset.class_ids, args.out)
        if args.masks:
            edited = edit_dataset(dataset, read_masks_csv(args.masks))
            write_pca_csv(project(result, edited.flattened()), edited.class_ids, edited_path(args.out))
    echo(f"дисперсии: {result.variances[0]:.6g}, {result.variances[1]:.6g}")
    return 0


def cmd_rank(args: argparse.Namespace) -> int:
    """Индексы выборок с наибольшей активацией в центре канала, по одному на строку."""
    dataset = read_dataset(args.data)
    for index in rank_channel_activations(dataset, args.channel, args.k):
        echo(str(index))
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser('stats', help='эксцесс каждого канала каждой выборки')
    parser.add_argument('--data', required=True, help='файл .feat')
    parser.add_argument('--out', required=True, help='CSV вывода')
    parser.set_defaults(handler=cmd_stats)

    parser = subparsers.add_parser('pca', help='проекция признаков на две главные компоненты')
    parser.add_argument('--data', required=True, help='файл .feat')
    parser.add_argument('--out', required=True, help='CSV вывода')
    parser.add_argument('--masks', default=None, help='masks.csv: дополнительно проецировать редактированные признаки')
    parser.set_defaults(handler=cmd_pca)

    parser = subparsers.add_parser('rank', help='лучшие выборки по активации в центре канала')
    parser.add_argument('--data', required=True, help='файл .feat')
    parser.add_argument('--channel', type=int, required=True, help='индекс канала')
    parser.add_argument('-k', type=int, default=9, help='сколько индексов вывести')
    parser.set_defaults(handler=cmd_rank)

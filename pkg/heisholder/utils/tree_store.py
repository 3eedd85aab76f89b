import json
import logging
import os
from typing import Any, Dict, Iterator, List, Tuple

import numpy as np
from sqlalchemy import insert, select

from heisholder.database import check_store, create_store_engine, get_session, init_db
from heisholder.models import STORE_VERSION, NodeRecord, TreeRecord
from heisholder.params import CarnotParams
from heisholder.services.holder2d import Node, SubdivisionTree
from heisholder.utils.io import CurveDocument, curve_from_document, curve_to_document

logger = logging.getLogger(__name__)

VERIFY_TOL = 1e-9
_DERIVED = {"eta", "rho", "E"}


def _path_key(path: Tuple[int, ...]) -> str:
    return ".".join(str(t) for t in path)


def _parse_path(key: str) -> Tuple[int, ...]:
    return tuple(int(t) for t in key.split(".")) if key else ()


def save_tree(tree: SubdivisionTree, path: str, batch_size: int = 1000) -> int:
    """
    Writes the tree recipe and every materialized node curve.
    Nodes go in batches; returns the number of nodes written.
    """
    if os.path.exists(path):
        os.remove(path)
    engine = create_store_engine(path)
    init_db(engine)
    session = get_session(engine)
    total = 0
    try:
        record = TreeRecord(
            version=STORE_VERSION,
            gamma=curve_to_document(tree.gamma).model_dump_json(),
            params=json.dumps(tree.params.model_dump(mode="json", exclude=_DERIVED), sort_keys=True),
            depth=tree.depth,
            n_eff=tree.n_eff,
            lazy=tree.lazy,
            tol=tree.tol,
        )
        session.add(record)
        session.flush()
        for batch in _node_batches(tree, record.id, batch_size):
            session.execute(insert(NodeRecord), batch)
            total += len(batch)
            logger.debug(f"Stored {total} nodes...")
        record.node_count = total
        session.commit()
        logger.info(f"Tree saved to {path}: {total} nodes")
    except Exception as e:
        session.rollback()
        logger.error(f"Error saving tree: {e}")
        raise
    finally:
        session.close()
        engine.dispose()
    return total


def _node_batches(tree: SubdivisionTree, tree_id: int, batch_size: int) -> Iterator[List[Dict[str, Any]]]:
    batch = []
    for node in tree.materialized():
        batch.append({
            "tree_id": tree_id,
            "path": _path_key(node.path),
            "depth": node.depth,
            "length": node.length,
            "sliver": node.sliver,
            "terminal": node.terminal,
            "curve": curve_to_document(node.curve).model_dump_json(),
        })
        if len(batch) >= batch_size:
            yield batch
            batch = []
    if batch:
        yield batch


def _same_curve(stored: CurveDocument, node: Node) -> bool:
    a = np.array(stored.vertices, dtype=float)
    b = np.array([p.as_list() for p in node.curve.vertices], dtype=float)
    if a.shape != b.shape:
        return False
    return bool(np.all(np.abs(a - b) <= VERIFY_TOL * (1.0 + np.abs(a))))


def load_tree(path: str, verify: bool = True) -> SubdivisionTree:
    """
    Rebuilds the tree from its recipe and re-materializes the stored nodes.
    With verify, each re-derived node curve must match the stored one and
    every filling used while rebuilding is checked.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"tree file not found: {path}")
    engine = create_store_engine(path)
    if not check_store(engine):
        engine.dispose()
        raise ValueError(f"{path} is not a tree store")
    session = get_session(engine)
    try:
        record = session.execute(select(TreeRecord)).scalars().first()
        if record is None:
            raise ValueError(f"{path} holds no tree")
        if record.version != STORE_VERSION:
            raise ValueError(f"{path} has store version {record.version}, expected {STORE_VERSION}")
        gamma = curve_from_document(CurveDocument.model_validate_json(record.gamma), record.tol)
        params = CarnotParams.model_validate(json.loads(record.params))
        tree = SubdivisionTree(gamma, record.depth, record.n_eff, params, lazy=record.lazy, tol=record.tol,
                               verify=verify)
        rows = session.execute(
            select(NodeRecord.path, NodeRecord.depth, NodeRecord.curve)
            .where(NodeRecord.tree_id == record.id)
            .order_by(NodeRecord.depth, NodeRecord.id)
        ).all()
    finally:
        session.close()
        engine.dispose()

    mismatched = 0
    for key, _, curve_json in rows:
        node = tree.node(_parse_path(key))
        if verify and not _same_curve(CurveDocument.model_validate_json(curve_json), node):
            mismatched += 1
    if mismatched:
        raise ValueError(f"{mismatched} stored node curves differ from the rebuilt tree")
    logger.info(f"Tree loaded from {path}: depth {tree.depth}, n_eff {tree.n_eff}, {len(rows)} nodes")
    return tree

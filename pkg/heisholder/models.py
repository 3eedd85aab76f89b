from sqlalchemy import Boolean, Column, Float, ForeignKey, Integer, String, Text

from heisholder.database import Base

STORE_VERSION = 2


class TreeRecord(Base):
    __tablename__ = "trees"

    id = Column(Integer, primary_key=True)
    version = Column(Integer, default=STORE_VERSION)
    gamma = Column(Text)  # curve document JSON
    params = Column(Text)  # CarnotParams JSON
    depth = Column(Integer)
    n_eff = Column(Integer)
    lazy = Column(Boolean)
    tol = Column(Float)
    node_count = Column(Integer)


class NodeRecord(Base):
    __tablename__ = "nodes"

    id = Column(Integer, primary_key=True)
    tree_id = Column(Integer, ForeignKey("trees.id"), index=True)
    path = Column(String, index=True)  # dot-joined child indices, "" for the root
    depth = Column(Integer)
    length = Column(Float)
    sliver = Column(Boolean)
    terminal = Column(Boolean)
    curve = Column(Text)

import logging

from sqlalchemy import create_engine, text
from sqlalchemy.engine import Engine
from sqlalchemy.orm import declarative_base, sessionmaker
from sqlalchemy.pool import StaticPool

logger = logging.getLogger(__name__)

Base = declarative_base()


def create_store_engine(path: str) -> Engine:
    """SQLite engine for one tree file."""
    return create_engine(
        f"sqlite:///{path}",
        connect_args={
            "check_same_thread": False,
            "timeout": 30,
        },
        # One connection shared by the worker threads of a build
        poolclass=StaticPool,
        echo=False,
    )


def init_db(engine: Engine) -> None:
    """Creates the tree tables."""
    try:
        from heisholder.models import NodeRecord, TreeRecord  # noqa: F401
        Base.metadata.create_all(bind=engine)
        logger.debug(f"Tree store initialized at {engine.url}")
    except Exception as e:
        logger.error(f"Error initializing tree store: {e}")
        raise


def get_session(engine: Engine):
    return sessionmaker(autocommit=False, autoflush=False, bind=engine)()


def check_store(engine: Engine) -> bool:
    try:
        with engine.connect() as connection:
            connection.execute(text("SELECT 1 FROM trees LIMIT 1"))
        return True
    except Exception as e:
        logger.error(f"Tree store check failed: {e}")
        return False

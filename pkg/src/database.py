from datetime import datetime

from sqlalchemy import Column, DateTime, Integer, String, Text, create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

Base = declarative_base()

engine = None
SessionLocal = sessionmaker(autocommit=False, autoflush=False)


class RunLog(Base):
    __tablename__ = "run_logs"

    id = Column(Integer, primary_key=True, index=True)
    scenario = Column(String, index=True)
    timestamp = Column(DateTime, default=datetime.now)
    status = Column(String)  # "success", "failed"
    exit_code = Column(Integer, default=0)
    summary = Column(Text)
    details = Column(Text)  # JSON string of the scenario results
    out_dir = Column(String, nullable=True)


def init_db(url):
    """Bind the session factory to ``url`` and create the tables."""
    global engine
    connect_args = {"check_same_thread": False} if url.startswith("sqlite") else {}
    engine = create_engine(url, connect_args=connect_args)
    SessionLocal.configure(bind=engine)
    Base.metadata.create_all(bind=engine)
    return engine

"""
Defines the SQLHandler class that records experiment runs in SQLite.

Imports:
    sqlite3
    datetime

Classes:
    SQLHandler
"""
import datetime
import sqlite3

DEFAULT_DB_NAME: str = "fisherflow_runs.db"


class SQLHandler:
    """
    A class to handle SQLite database interactions for the run registry.

    Registry failures are reported and never abort a run.

    Attributes:
        __connection (sqlite3.Connection | None): The SQLite database connection.
    """
    def __init__(self, db_name: str = DEFAULT_DB_NAME) -> None:
        """
        Initialises the SQLHandler class by creating a database connection and table.

        Args:
            db_name (str): The name of the database file. Defaults to 'fisherflow_runs.db'.
        """
        self.__connection: sqlite3.Connection | None = self.__create_connection(db_name)
        self.__create_table()

    def __create_connection(self, db_name: str) -> sqlite3.Connection | None:
        """
        Creates a connection to the SQLite database.

        Args:
            db_name (str): The name of the database file.

        Returns:
            sqlite3.Connection | None: The database connection, or None if it could not be opened.
        """
        connection: sqlite3.Connection | None = None

        # Error handling
        try:
            connection = sqlite3.connect(db_name)
        except sqlite3.Error as error:
            print(f"The error '{error}' occurred")
        return connection

    def __create_table(self) -> None:
        """
        Creates the 'runs' table in the database if it does not already exist.
        """
        if self.__connection is None:
            return
        create_table_query = """
        CREATE TABLE IF NOT EXISTS runs (
            run_id INTEGER PRIMARY KEY AUTOINCREMENT,
            datetime TEXT NOT NULL,
            experiment TEXT NOT NULL,
            seed TEXT NOT NULL,
            config_hash TEXT NOT NULL,
            exit_status INTEGER NOT NULL,
            wall_clock REAL NOT NULL
        );
        """

        # Error handling
        try:
            cursor = self.__connection.cursor()
            cursor.execute(create_table_query)
            self.__connection.commit()
        except sqlite3.Error as error:
            print(f"The error '{error}' occurred")

    def save_run(self, params: tuple) -> None:
        """
        Saves one run to the database.

        Args:
            params (tuple): (experiment, seed, config_hash, exit_status, wall_clock).
        """
        if self.__connection is None:
            return
        datetime_str: str = datetime.datetime.now().strftime("%Y-%m-%d %H:%M:%S") # Current datetime
        experiment, seed, *rest = params
        parameters = (datetime_str, experiment, str(seed), *rest) # Seeds may exceed the SQLite integer range

        save_query = """
        INSERT INTO runs (datetime, experiment, seed, config_hash, exit_status, wall_clock)
        VALUES (?, ?, ?, ?, ?, ?)
        """

        # Error handling
        try:
            cursor = self.__connection.cursor()
            cursor.execute(save_query, parameters)
            self.__connection.commit()
        except sqlite3.Error as error:
            print(f"The error '{error}' occurred")

    def fetch_runs(self) -> list[tuple]:
        """
        Gets every recorded run, oldest first.

        Returns:
            list[tuple]: Rows of (run_id, datetime, experiment, seed, config_hash, exit_status, wall_clock).
        """
        if self.__connection is None:
            return []
        try:
            cursor = self.__connection.cursor()
            cursor.execute("SELECT * FROM runs ORDER BY run_id")
            return cursor.fetchall()
        except sqlite3.Error as error:
            print(f"The error '{error}' occurred")
            return []

    def close_connection(self) -> None:
        """
        Closes the database connection.
        """
        if self.__connection:
            self.__connection.close()

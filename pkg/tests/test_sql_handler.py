from fisherflow import sql_handler


def test_runs_are_saved_in_order(tmp_path):
    handler = sql_handler.SQLHandler(str(tmp_path / "runs.db"))
    handler.save_run(("gmm-prior", 2 ** 63 + 5, "abc", 0, 1.25))
    handler.save_run(("funnel", 3, "def", 2, 0.5))
    rows = handler.fetch_runs()
    handler.close_connection()
    assert [row[2] for row in rows] == ["gmm-prior", "funnel"]
    assert rows[0][3] == str(2 ** 63 + 5)
    assert rows[0][4:] == ("abc", 0, 1.25)
    assert rows[1][5] == 2


def test_registry_persists_between_connections(tmp_path):
    path = str(tmp_path / "runs.db")
    first = sql_handler.SQLHandler(path)
    first.save_run(("logreg", 1, "h", 0, 2.0))
    first.close_connection()
    second = sql_handler.SQLHandler(path)
    assert len(second.fetch_runs()) == 1
    second.close_connection()


def test_unopenable_database_is_reported_not_raised(tmp_path, capsys):
    handler = sql_handler.SQLHandler(str(tmp_path / "missing" / "runs.db"))
    handler.save_run(("logreg", 1, "h", 0, 2.0))
    assert handler.fetch_runs() == []
    assert "occurred" in capsys.readouterr().out

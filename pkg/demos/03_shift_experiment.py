# A shrunken version of the regime-A -> regime-B experiment, end to end in a temp dir.
# The full-size run is the beijing-like preset; this one finishes in well under a minute.
import tempfile
from dataclasses import replace
from pathlib import Path

from reettt import config as C
from reettt import experiment as E

cfg = C.preset("beijing-like")
cfg = replace(cfg,
              data=replace(cfg.data, sequences=10, test_sequences=2, shift_sequences=10, shift_test_sequences=8),
              model=replace(cfg.model, h=16, w=16),
              training=replace(cfg.training, epochs=4, adapt_epochs=2))

with tempfile.TemporaryDirectory() as tmp:
    root = Path(tmp)
    manifest = E.cmd_gen_data(cfg, root / "data")
    print("sequences written:", len(manifest.entries))

    rec = E.cmd_train(cfg, manifest, root / "model.rttc")
    print("train loss per epoch:", [round(v, 2) for v in rec.train_loss])
    print("val ETS per epoch:", rec.val_ets, "-> selected epoch", rec.selected_epoch)

    report = E.cmd_evaluate(cfg, root / "model.rttc", manifest, "ttt_on")
    print("regime-A test CSI by threshold:", {tk: report.mean("csi", float(tk)) for tk in report.scores})

    comp = E.cmd_compare_ttt(cfg, root / "model.rttc", manifest, emit_csv=root / "curves.csv")
    print("regime-B win-rate of ttt_on:", comp.win_rate)
    print("CSI25 per lead, on :", [None if v is None else round(v, 3) for v in comp.csi25["ttt_on"]])
    print("CSI25 per lead, off:", [None if v is None else round(v, 3) for v in comp.csi25["ttt_off"]])

    target = replace(cfg, data=replace(cfg.data, domain="regime-B", shift_domain="regime-A"))
    ad = E.cmd_adapt(target, root / "model.rttc", manifest, root / "adapted.rttc")
    print(f"regime-B val ETS: zero-shot {ad.initial['val_ets']} -> adapted {ad.criterion} "
          f"({ad.trainable} trainable values)")

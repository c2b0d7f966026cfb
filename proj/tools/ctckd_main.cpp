#include <CLI11.hpp>

#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ctckd/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"ctckd: CTC speech recognition with attention-decoder distillation"};
  app.require_subcommand(1);

  CLI::App* gen = app.add_subcommand("gen-data", "synthesize a corpus");
  std::string gen_config;
  bool gen_force = false;
  gen->add_option("--config", gen_config, "experiment config file")->required();
  gen->add_flag("--force", gen_force, "regenerate even if the corpus directory has files");

  CLI::App* teach = app.add_subcommand("train-teacher",
                                       "train the masked-language-model teacher");
  std::string teach_config;
  teach->add_option("--config", teach_config, "experiment config file")->required();

  CLI::App* train = app.add_subcommand("train-asr", "train a recognizer variant");
  std::string train_config, train_variant, train_run;
  train->add_option("--config", train_config, "experiment config file")->required();
  train->add_option("--variant", train_variant, "loss mixture to train")
      ->required()
      ->check(CLI::IsMember({"ctc", "aed-kd", "interaed-kd", "interctc-interaed-kd"}));
  train->add_option("--run", train_run,
                    "run directory (default <out_dir>/<variant>-seed<seed>)");

  CLI::App* dec = app.add_subcommand("decode", "decode a dataset split");
  std::string dec_config, dec_run, dec_split = "dev", dec_mode = "greedy", dec_out;
  int dec_beam = 0;
  double dec_lm_weight = 0.0, dec_ins = 0.0;
  dec->add_option("--config", dec_config, "experiment config file")->required();
  dec->add_option("--run", dec_run, "trained run directory")->required();
  dec->add_option("--split", dec_split, "dataset split (default dev)")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  dec->add_option("--mode", dec_mode, "greedy or beam")
      ->check(CLI::IsMember({"greedy", "beam"}));
  dec->add_option("--beam", dec_beam, "beam width (default from config)")
      ->check(CLI::PositiveNumber);
  dec->add_option("--lm-weight", dec_lm_weight, "LM fusion weight (default from config)")
      ->check(CLI::NonNegativeNumber);
  dec->add_option("--ins-penalty", dec_ins, "per-token insertion bonus/penalty");
  dec->add_option("--out", dec_out, "hypothesis file (default <run>/<split>_<mode>.hyp)");

  CLI::App* ev = app.add_subcommand("eval", "score hypotheses against references");
  std::string ev_config, ev_run, ev_hyp;
  ev->add_option("--config", ev_config, "experiment config file")->required();
  ev->add_option("--run", ev_run, "run directory whose metrics.tsv gets the row")
      ->required();
  ev->add_option("--hyp", ev_hyp, "hypothesis file from decode")->required();

  CLI::App* rep = app.add_subcommand("report", "assemble the results table");
  std::vector<std::string> rep_dirs;
  std::string rep_out;
  bool rep_rtf = false;
  rep->add_option("dirs", rep_dirs, "run directories to compare")->required();
  rep->add_option("--out", rep_out, "write the table here instead of stdout");
  rep->add_flag("--with-rtf", rep_rtf, "append wall-clock RTF rows (not reproducible)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  using namespace ctckd;
  try {
    if (*gen) {
      ExperimentConfig cfg = ExperimentConfig::load(gen_config);
      run_gen_data(cfg, gen_force);
      std::cout << "corpus written to " << cfg.corpus_dir << '\n';
    } else if (*teach) {
      ExperimentConfig cfg = ExperimentConfig::load(teach_config);
      TeacherArtifacts art = run_train_teacher(cfg, &std::cout);
      std::cout << "teacher ready: hash " << std::hex << art.teacher_hash << std::dec
                << ", masked dev accuracy " << art.masked_dev_accuracy << '\n';
    } else if (*train) {
      ExperimentConfig cfg = ExperimentConfig::load(train_config);
      const Variant v = parse_variant(train_variant);
      const std::string run_dir = train_run.empty() ? run_dir_for(cfg, v) : train_run;
      RunLedger led = train_asr(cfg, v, run_dir, &std::cout);
      std::cout << "best epoch " << led.best_epoch << " (dev ctc " << led.best_dev_ctc
                << ") -> " << run_dir << '\n';
    } else if (*dec) {
      ExperimentConfig cfg = ExperimentConfig::load(dec_config);
      AsrModel model = load_asr_model(cfg, dec_run);
      CorpusPaths paths{cfg.corpus_dir};
      SplitData data = load_split(paths, dec_split, model.vocab);
      BeamConfig bc;
      bc.beam = dec->count("--beam") ? dec_beam : cfg.decode_beam;
      bc.lm_weight = dec->count("--lm-weight") ? dec_lm_weight : cfg.decode_lm_weight;
      bc.ins_penalty = dec->count("--ins-penalty") ? dec_ins : cfg.decode_ins_penalty;
      std::optional<NgramLm> lm;
      if (dec_mode == "beam" && bc.lm_weight > 0.0) {
        lm.emplace(NgramLm::load(paths.ngram(), model.vocab));
        bc.lm = &*lm;
      } else {
        bc.lm_weight = 0.0;
      }
      DecodeRun out = decode_manifest(model, data.man, data.feats, dec_split, dec_mode, bc);
      const std::string out_path =
          dec_out.empty() ? dec_run + "/" + dec_split + "_" + out.mode_tag + ".hyp"
                          : dec_out;
      save_hypotheses(out, out_path);
      std::cout << "wrote " << out.hyps.size() << " hypotheses to " << out_path
                << " (rtf " << out.rtf << ")\n";
    } else if (*ev) {
      ExperimentConfig cfg = ExperimentConfig::load(ev_config);
      RunLedger led = RunLedger::load(ev_run + "/ledger.txt");
      DecodeRun run = load_hypotheses(ev_hyp);
      CorpusPaths paths{cfg.corpus_dir};
      Vocab vocab = Vocab::load(paths.vocab());
      CorpusManifest man = load_manifest(paths.manifest(run.split), vocab);
      EvalResult res = evaluate_hypotheses(run, man, led.variant);
      append_metrics_row(ev_run, res);
      std::cout << res.split << ' ' << res.mode << " wer "
                << 100.0 * res.agg.rate() << " (sub " << res.agg.sub << " ins "
                << res.agg.ins << " del " << res.agg.del << ")\n";
    } else if (*rep) {
      Report r = render_report(rep_dirs, rep_rtf);
      if (rep_out.empty()) {
        std::cout << r.text();
      } else {
        std::ofstream os(rep_out);
        check_state(os.good(), "report: cannot write ", rep_out);
        os << r.text();
        std::cout << "report written to " << rep_out << '\n';
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

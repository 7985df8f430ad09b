#include "ogen/run_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ogen/checkpoint.hpp"

namespace ogen {

namespace {

using nlohmann::json;

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + p.string());
  out << text;
}

std::string epoch_stem(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04d", epoch);
  return buf;
}

}  // namespace

std::string config_to_json(const TrainConfig& c, const std::string& data_path) {
  json j;
  j["data"] = data_path;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["k"] = c.k;
  j["scheme"] = to_string(c.scheme);
  j["distill"] = to_string(c.distill);
  j["fixed_window"] = c.fixed_window;
  j["neighbors"] = to_string(c.neighbors);
  j["tau"] = c.tau;
  j["learning_rate"] = c.learning_rate;
  j["generator_learning_rate"] = c.generator_learning_rate;
  j["momentum"] = c.momentum;
  j["lambda_syn"] = c.lambda_syn;
  j["lambda_distill"] = c.lambda_distill;
  j["pseudo_unknown_fraction"] = c.pseudo_unknown_fraction;
  j["shots"] = c.shots;
  j["heads"] = c.heads;
  j["ffn_dim"] = c.ffn_dim;
  j["ema_alpha"] = c.ema_alpha;
  j["m_min"] = c.m_min;
  j["m_max"] = c.m_max;
  j["known_loss_base_only"] = c.known_loss_base_only;
  j["seed"] = c.seed;
  return j.dump(2) + "\n";
}

TrainConfig config_from_json(const std::string& text, std::string* data_path) {
  try {
    const json j = json::parse(text);
    TrainConfig c;
    c.epochs = j.at("epochs");
    c.batch_size = j.at("batch_size");
    c.k = j.at("k");
    c.scheme = parse_scheme(j.at("scheme"));
    c.distill = parse_distill(j.at("distill"));
    c.fixed_window = j.at("fixed_window");
    c.neighbors = parse_neighbor_mode(j.at("neighbors"));
    c.tau = j.at("tau");
    c.learning_rate = j.at("learning_rate");
    c.generator_learning_rate = j.at("generator_learning_rate");
    c.momentum = j.at("momentum");
    c.lambda_syn = j.at("lambda_syn");
    c.lambda_distill = j.at("lambda_distill");
    c.pseudo_unknown_fraction = j.at("pseudo_unknown_fraction");
    c.shots = j.at("shots");
    c.heads = j.at("heads");
    c.ffn_dim = j.at("ffn_dim");
    c.ema_alpha = j.at("ema_alpha");
    c.m_min = j.at("m_min");
    c.m_max = j.at("m_max");
    c.known_loss_base_only = j.at("known_loss_base_only");
    c.seed = j.at("seed");
    if (data_path) *data_path = j.at("data");
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
}

std::string metrics_row(const EpochMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.9g,%.9g,%.9g,%d,%d,%d", m.epoch, m.base_acc, m.new_acc,
                m.harmonic, m.known_ce, m.synth_ce, m.distill_mse, m.window, m.teacher_first, m.teacher_last);
  return buf;
}

std::vector<EpochMetrics> read_metrics_csv(const std::filesystem::path& path) {
  std::istringstream in(slurp(path));
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw FormatError(path.string() + ": unexpected header");
  std::vector<EpochMetrics> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochMetrics m;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf,%lf,%d,%d,%d", &m.epoch, &m.base_acc, &m.new_acc,
                    &m.harmonic, &m.known_ce, &m.synth_ce, &m.distill_mse, &m.window, &m.teacher_first,
                    &m.teacher_last) != 10)
      throw FormatError(path.string() + ": malformed row '" + line + "'");
    if (!rows.empty() && m.epoch <= rows.back().epoch)
      throw FormatError(path.string() + ": epochs not strictly increasing");
    rows.push_back(m);
  }
  return rows;
}

void save_train_state(const RunPaths& run, const TrainState& st, const TrainConfig& cfg) {
  std::filesystem::create_directories(run.state());
  std::filesystem::create_directories(run.checkpoints());

  Checkpoint current{st.params, to_string(cfg.scheme), st.epoch, st.embeddings, {}};
  save_checkpoint(current, run.state() / "params");
  GeneratorParams vel = st.params;
  static_cast<GeneratorTensors&>(vel) = st.params_velocity;
  save_checkpoint({vel, to_string(cfg.scheme), st.epoch, st.embedding_velocity, {}}, run.state() / "velocity");
  if (st.mean_teacher) save_checkpoint({*st.mean_teacher, to_string(cfg.scheme), st.epoch, {}, {}}, run.state() / "mean_teacher");

  json j;
  j["epoch"] = st.epoch;
  j["rng"] = st.rng_state;
  j["mean_teacher"] = st.mean_teacher.has_value();
  json queue = json::array();
  for (const auto& e : st.queue) {
    const auto stem = run.checkpoints() / epoch_stem(e.epoch);
    if (!std::filesystem::exists(stem.string() + ".bin"))
      save_checkpoint({e.params, to_string(cfg.scheme), e.epoch, {}, {}}, stem);
    queue.push_back(e.epoch);
  }
  j["queue"] = queue;
  j["warnings"] = st.metrics.warnings;
  // Drop queue checkpoints that have been evicted.
  for (const auto& entry : std::filesystem::directory_iterator(run.checkpoints())) {
    const auto name = entry.path().stem().string();
    if (name.rfind("epoch_", 0) != 0) continue;
    const int ep = std::stoi(name.substr(6));
    bool keep = false;
    for (const auto& e : st.queue) keep |= (e.epoch == ep);
    if (!keep) std::filesystem::remove(entry.path());
  }
  const auto tmp = run.state() / "state.json.tmp";
  write_text(tmp, j.dump(2) + "\n");
  std::filesystem::rename(tmp, run.state() / "state.json");
}

TrainState load_train_state(const RunPaths& run, const TrainConfig& cfg) {
  json j;
  try {
    j = json::parse(slurp(run.state() / "state.json"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("state.json: ") + e.what());
  }
  TrainState st;
  st.epoch = j.at("epoch");
  st.rng_state = j.at("rng");
  Checkpoint cur = load_checkpoint(run.state() / "params");
  if (cur.epoch != st.epoch) throw FormatError("state checkpoint epoch does not match state.json");
  st.params = cur.params;
  st.embeddings = cur.class_embeddings;
  Checkpoint vel = load_checkpoint(run.state() / "velocity");
  st.params_velocity = vel.params;
  st.embedding_velocity = vel.class_embeddings;
  if (j.at("mean_teacher").get<bool>()) st.mean_teacher = load_checkpoint(run.state() / "mean_teacher").params;
  for (int ep : j.at("queue")) st.queue.push_back({ep, load_checkpoint(run.checkpoints() / epoch_stem(ep)).params});
  st.metrics.epochs = read_metrics_csv(run.metrics());
  st.metrics.warnings = j.at("warnings").get<std::vector<std::string>>();
  if (static_cast<int>(st.metrics.epochs.size()) > st.epoch) st.metrics.epochs.resize(st.epoch);
  if (static_cast<int>(st.metrics.epochs.size()) != st.epoch)
    throw FormatError("metrics.csv has fewer rows than the saved state");
  (void)cfg;
  return st;
}

std::string learning_curve_svg(const std::vector<EpochMetrics>& epochs, const std::string& title) {
  const double W = 640, H = 400, L = 60, R = 20, T = 40, B = 50;
  const double n = std::max<double>(1.0, static_cast<double>(epochs.size()));
  auto x = [&](double e) { return L + (W - L - R) * (e - 1) / std::max(1.0, n - 1); };
  auto y = [&](double a) { return H - B - (H - T - B) * a; };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
     << title << "</text>\n"
     << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double a = i / 4.0;
    os << "<text x=\"" << L - 8 << "\" y=\"" << y(a) + 4 << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
       << "font-size=\"11\">" << static_cast<int>(a * 100) << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 14
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">epoch</text>\n";
  auto polyline = [&](auto get, const char* color, const char* label, double ly) {
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& m : epochs) os << x(m.epoch) << ',' << y(get(m)) << ' ';
    os << "\"/>\n<text x=\"" << W - R - 90 << "\" y=\"" << ly << "\" fill=\"" << color
       << "\" font-family=\"sans-serif\" font-size=\"12\">" << label << "</text>\n";
  };
  polyline([](const EpochMetrics& m) { return m.base_acc; }, "#1f77b4", "base acc", T + 14);
  polyline([](const EpochMetrics& m) { return m.new_acc; }, "#d62728", "new acc", T + 30);
  os << "</svg>\n";
  return os.str();
}

}  // namespace ogen

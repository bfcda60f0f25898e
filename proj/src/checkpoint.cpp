#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "arisaoi/nn.hpp"

namespace arisaoi {

namespace {

constexpr const char* kMagic = "arisaoi-checkpoint,1";

std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_double(const std::string& text) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end == text.c_str() || *end != '\0') throw std::runtime_error("checkpoint: bad number '" + text + "'");
  return v;
}

std::pair<std::string, std::string> split_field(const std::string& line) {
  const auto comma = line.find(',');
  if (comma == std::string::npos) return {line, ""};
  return {line.substr(0, comma), line.substr(comma + 1)};
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  out << kMagic << '\n';
  out << "input_dim," << ck.spec.input_dim << '\n';
  out << "hidden,";
  for (std::size_t i = 0; i < ck.spec.hidden.size(); ++i) out << (i ? ";" : "") << ck.spec.hidden[i];
  out << '\n';
  out << "activation," << (ck.spec.activation == Activation::tanh ? "tanh" : "identity") << '\n';
  for (const auto& h : ck.spec.heads)
    out << "head," << h.name << ',' << h.output_dim << ','
        << (h.kind == HeadKind::categorical_logits ? "categorical" : "scalar") << '\n';
  out << "seed," << ck.seed << '\n';
  out << "step," << ck.step << '\n';
  if (!ck.input.identity()) {
    out << "input_clip," << hexfloat(ck.input.clip) << '\n';
    out << "input_shift";
    for (Eigen::Index k = 0; k < ck.input.shift.size(); ++k) out << ',' << hexfloat(ck.input.shift[k]);
    out << "\ninput_scale";
    for (Eigen::Index k = 0; k < ck.input.scale.size(); ++k) out << ',' << hexfloat(ck.input.scale[k]);
    out << '\n';
  }
  out << "params," << ck.params.size() << '\n';
  for (Eigen::Index k = 0; k < ck.params.size(); ++k) out << hexfloat(ck.params[k]) << '\n';
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw std::runtime_error("checkpoint: missing header");
  Checkpoint ck;
  Eigen::Index count = -1;
  while (count < 0 && std::getline(in, line)) {
    auto [key, value] = split_field(line);
    if (key == "input_dim") {
      ck.spec.input_dim = std::stol(value);
    } else if (key == "hidden") {
      for (const auto& w : split(value, ';')) ck.spec.hidden.push_back(std::stol(w));
    } else if (key == "activation") {
      if (value == "tanh") ck.spec.activation = Activation::tanh;
      else if (value == "identity") ck.spec.activation = Activation::identity;
      else throw std::runtime_error("checkpoint: unknown activation " + value);
    } else if (key == "head") {
      const auto parts = split(value, ',');
      if (parts.size() != 3) throw std::runtime_error("checkpoint: malformed head line");
      HeadSpec h{parts[0], std::stol(parts[1]),
                 parts[2] == "categorical" ? HeadKind::categorical_logits : HeadKind::scalar};
      ck.spec.heads.push_back(std::move(h));
    } else if (key == "seed") {
      ck.seed = std::stoull(value);
    } else if (key == "step") {
      ck.step = std::stoll(value);
    } else if (key == "input_clip") {
      ck.input.clip = parse_double(value);
    } else if (key == "input_shift" || key == "input_scale") {
      const auto parts = split(value, ',');
      Eigen::VectorXd v(static_cast<Eigen::Index>(parts.size()));
      for (std::size_t k = 0; k < parts.size(); ++k) v[static_cast<Eigen::Index>(k)] = parse_double(parts[k]);
      (key == "input_shift" ? ck.input.shift : ck.input.scale) = std::move(v);
    } else if (key == "params") {
      count = std::stol(value);
    } else {
      throw std::runtime_error("checkpoint: unknown key " + key);
    }
  }
  if (count < 0) throw std::runtime_error("checkpoint: missing params section");
  ck.params.resize(count);
  for (Eigen::Index k = 0; k < count; ++k) {
    if (!std::getline(in, line)) throw std::runtime_error("checkpoint: truncated parameter list");
    ck.params[k] = parse_double(line);
  }
  Mlp<double> net(ck.spec);
  if (net.parameter_count() != count) throw std::runtime_error("checkpoint: parameter count does not match spec");
  if (ck.input.shift.size() != ck.input.scale.size() ||
      (!ck.input.identity() && ck.input.shift.size() != ck.spec.input_dim))
    throw std::runtime_error("checkpoint: input transform does not match spec");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  write_checkpoint(out, checkpoint);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace arisaoi

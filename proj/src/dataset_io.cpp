// Copyright 2026 The mrssm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mrssm/dataset_io.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mrssm/util.hpp"

namespace mrssm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct FieldRef {
  std::string name;
  const std::vector<float>* data;
};

std::vector<FieldRef> traj_fields(const Trajectory& traj,
                                  std::span<const ModalitySpec> mods,
                                  std::vector<float>& actions_flat,
                                  std::vector<float>& states_flat) {
  const int T = traj.length();
  actions_flat.clear();
  actions_flat.reserve(static_cast<std::size_t>(T) * 2);
  for (const Action& a : traj.actions) {
    actions_flat.push_back(a.v_target);
    actions_flat.push_back(a.omega_target);
  }
  states_flat.clear();
  states_flat.reserve(static_cast<std::size_t>(T) * 5);
  for (const RobotState& s : traj.states) {
    states_flat.push_back(static_cast<float>(s.x));
    states_flat.push_back(static_cast<float>(s.y));
    states_flat.push_back(static_cast<float>(s.theta));
    states_flat.push_back(static_cast<float>(s.v));
    states_flat.push_back(static_cast<float>(s.omega));
  }
  std::vector<FieldRef> fields;
  fields.push_back({"actions", &actions_flat});
  for (const ModalitySpec& m : mods) {
    fields.push_back({"obs." + m.name, &traj.obs.at(m.name)});
  }
  fields.push_back({"gt_states", &states_flat});
  return fields;
}

json modality_json(const ModalitySpec& m) {
  return json{{"name", m.name},
              {"kind", m.kind == ModalityKind::kDense ? "dense" : "image"},
              {"shape", m.shape},
              {"lambda", m.lambda}};
}

ModalitySpec modality_from(const json& j) {
  ModalitySpec m;
  m.name = j.at("name").get<std::string>();
  m.kind = j.at("kind").get<std::string>() == "image" ? ModalityKind::kImage
                                                      : ModalityKind::kDense;
  m.shape = j.at("shape").get<std::vector<int>>();
  m.lambda = j.at("lambda").get<float>();
  return m;
}

}  // namespace

void write_dataset(const std::string& dir, const Dataset& ds) {
  check_arg(static_cast<int>(ds.trajs.size()) == ds.n_train + ds.n_val,
            "write_dataset: counts do not match trajectory list");
  fs::create_directories(dir);

  json mods = json::array();
  for (const ModalitySpec& m : ds.modalities) mods.push_back(modality_json(m));
  const json meta = {{"schema_version", 1},
                     {"dt", ds.dt},
                     {"n_train", ds.n_train},
                     {"n_val", ds.n_val},
                     {"modalities", mods}};
  std::ofstream(fs::path(dir) / "meta.json") << meta.dump(2) << "\n";

  for (std::size_t i = 0; i < ds.trajs.size(); ++i) {
    const Trajectory& traj = ds.trajs[i];
    const int T = traj.length();
    std::vector<float> actions_flat, states_flat;
    const auto fields = traj_fields(traj, ds.modalities, actions_flat, states_flat);

    json jfields = json::array();
    std::uint64_t offset = 0;
    for (const FieldRef& f : fields) {
      jfields.push_back(json{{"name", f.name},
                             {"count", f.data->size()},
                             {"offset", offset}});
      offset += f.data->size() * sizeof(float);
    }
    json jmasks = json::object();
    for (const auto& [name, m] : traj.mask) {
      jmasks[name] = std::vector<int>(m.begin(), m.end());
    }
    const json tj = {
        {"length", T},
        {"dt", traj.dt},
        {"init_state",
         {traj.init_state.x, traj.init_state.y, traj.init_state.theta, traj.init_state.v,
          traj.init_state.omega}},
        {"terrain", traj.terrain},
        {"masks", jmasks},
        {"fields", jfields},
    };
    const std::string stem = "traj_" + std::to_string(i);
    std::ofstream(fs::path(dir) / (stem + ".json")) << tj.dump() << "\n";
    std::ofstream bin(fs::path(dir) / (stem + ".f32"), std::ios::binary);
    for (const FieldRef& f : fields) {
      bin.write(reinterpret_cast<const char*>(f.data->data()),
                static_cast<std::streamsize>(f.data->size() * sizeof(float)));
    }
    check_arg(bin.good(), "write_dataset: write failed for " + stem + ".f32");
  }
}

Dataset read_dataset(const std::string& dir) {
  const fs::path meta_path = fs::path(dir) / "meta.json";
  check_arg(fs::exists(meta_path),
            "read_dataset: empty dataset directory (no meta.json) at " + dir);
  json meta;
  {
    std::ifstream in(meta_path);
    try {
      in >> meta;
    } catch (const json::exception& e) {
      throw std::invalid_argument("read_dataset: malformed meta.json: " + std::string(e.what()));
    }
  }
  Dataset ds;
  ds.dt = meta.at("dt").get<double>();
  ds.n_train = meta.at("n_train").get<int>();
  ds.n_val = meta.at("n_val").get<int>();
  for (const json& m : meta.at("modalities")) ds.modalities.push_back(modality_from(m));
  check_arg(ds.n_train + ds.n_val > 0, "read_dataset: dataset at " + dir + " lists no trajectories");

  for (int i = 0; i < ds.n_train + ds.n_val; ++i) {
    const std::string stem = "traj_" + std::to_string(i);
    const fs::path jpath = fs::path(dir) / (stem + ".json");
    const fs::path bpath = fs::path(dir) / (stem + ".f32");
    check_arg(fs::exists(jpath), "read_dataset: missing " + jpath.string());
    check_arg(fs::exists(bpath), "read_dataset: missing " + bpath.string());
    json tj;
    {
      std::ifstream in(jpath);
      try {
        in >> tj;
      } catch (const json::exception& e) {
        throw std::invalid_argument("read_dataset: malformed " + jpath.string() + ": " + e.what());
      }
    }
    Trajectory traj;
    const int T = tj.at("length").get<int>();
    traj.dt = tj.at("dt").get<double>();
    const auto init = tj.at("init_state").get<std::vector<double>>();
    check_arg(init.size() == 5, "read_dataset: bad init_state in " + stem);
    traj.init_state = {init[0], init[1], init[2], init[3], init[4]};
    traj.terrain = tj.at("terrain").get<std::vector<int>>();
    check_arg(static_cast<int>(traj.terrain.size()) == T,
              "read_dataset: terrain length mismatch in " + stem);
    for (const auto& [name, m] : tj.at("masks").items()) {
      const auto v = m.get<std::vector<int>>();
      check_arg(static_cast<int>(v.size()) == T,
                "read_dataset: mask length mismatch for field '" + name + "' in " + stem);
      traj.mask[name] = std::vector<std::uint8_t>(v.begin(), v.end());
    }

    const std::uintmax_t file_size = fs::file_size(bpath);
    std::ifstream bin(bpath, std::ios::binary);
    for (const json& f : tj.at("fields")) {
      const std::string name = f.at("name").get<std::string>();
      const std::uint64_t count = f.at("count").get<std::uint64_t>();
      const std::uint64_t offset = f.at("offset").get<std::uint64_t>();
      check_arg(offset + count * sizeof(float) <= file_size,
                "read_dataset: truncated binary payload for field '" + name + "' in " + stem +
                    ".f32");
      std::vector<float> data(count);
      bin.seekg(static_cast<std::streamoff>(offset));
      bin.read(reinterpret_cast<char*>(data.data()),
               static_cast<std::streamsize>(count * sizeof(float)));
      check_arg(bin.good(), "read_dataset: read failed for field '" + name + "' in " + stem);
      if (name == "actions") {
        check_arg(count == static_cast<std::uint64_t>(T) * 2,
                  "read_dataset: bad actions count in " + stem);
        traj.actions.resize(static_cast<std::size_t>(T));
        for (int t = 0; t < T; ++t) {
          traj.actions[static_cast<std::size_t>(t)] = {data[static_cast<std::size_t>(t) * 2],
                                                       data[static_cast<std::size_t>(t) * 2 + 1]};
        }
      } else if (name == "gt_states") {
        check_arg(count == static_cast<std::uint64_t>(T) * 5,
                  "read_dataset: bad gt_states count in " + stem);
        traj.states.resize(static_cast<std::size_t>(T));
        for (int t = 0; t < T; ++t) {
          const float* s = data.data() + static_cast<std::size_t>(t) * 5;
          traj.states[static_cast<std::size_t>(t)] = {s[0], s[1], s[2], s[3], s[4]};
        }
      } else if (name.rfind("obs.", 0) == 0) {
        traj.obs[name.substr(4)] = std::move(data);
      } else {
        throw std::invalid_argument("read_dataset: unknown field '" + name + "' in " + stem);
      }
    }
    for (const ModalitySpec& m : ds.modalities) {
      check_arg(traj.obs.count(m.name) == 1,
                "read_dataset: trajectory " + stem + " lacks modality " + m.name);
      check_arg(traj.obs[m.name].size() ==
                    static_cast<std::size_t>(T) * static_cast<std::size_t>(m.numel()),
                "read_dataset: bad element count for field 'obs." + m.name + "' in " + stem);
    }
    ds.trajs.push_back(std::move(traj));
  }
  return ds;
}

}  // namespace mrssm

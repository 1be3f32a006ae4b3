// SPDX-License-Identifier: Apache-2.0
//
// Test judge for the line protocol. Answers "correct" when the selection
// contains index 0. Modes (argv[1]): ok, bad-json, wrong-id, exit.
#include <iostream>
#include <string>

#include <json.hpp>

int main(int argc, char** argv) {
  const std::string mode = argc > 1 ? argv[1] : "ok";
  std::string line;
  while (std::getline(std::cin, line)) {
    if (mode == "exit") return 3;
    const auto req = nlohmann::json::parse(line);
    if (mode == "bad-json") {
      std::cout << "{not json\n" << std::flush;
      continue;
    }
    bool has0 = false;
    for (const auto& i : req.at("selection"))
      if (i.get<long>() == 0) has0 = true;
    nlohmann::json resp = {{"id", mode == "wrong-id" ? std::string("other") : req.at("id").get<std::string>()},
                           {"correct", has0}};
    std::cout << resp.dump() << "\n" << std::flush;
  }
  return 0;
}
